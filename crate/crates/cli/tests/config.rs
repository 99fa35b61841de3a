use std::collections::HashMap;

use contact_core::adaptive::StoppingMode;
use contact_equilibrate::config::{env_name, parse_config, ConfigError};

const SHIPPED: &str = include_str!("../benchmark.cfg");

fn no_env(_: &str) -> Option<String> {
    None
}

#[test]
fn shipped_config_has_the_benchmark_parameters() {
    let cfg = parse_config(SHIPPED, no_env).unwrap();
    assert_eq!((cfg.benchmark.young, cfg.benchmark.poisson), (1.0, 0.3));
    let a = &cfg.adaptive;
    assert_eq!((a.gamma0, a.delta_init, a.gamma_reg, a.gamma_lin, a.marking_fraction), (100.0, 1.0, 0.04, 0.08, 0.06));
    assert_eq!(a.max_steps, 11);
    assert_eq!(a.mode, StoppingMode::Global);
    assert_eq!(a.evenness_ratio, None);
    assert_eq!(cfg.benchmark.body_force, [0.0, -0.01]);
    assert_eq!(cfg.tractions.right, [-0.0275, 0.0]);
}

#[test]
fn empty_text_lists_the_required_keys() {
    let Err(ConfigError::Missing(keys)) = parse_config("", no_env) else { panic!() };
    for k in ["material.young", "material.poisson", "nitsche.gamma0", "nitsche.delta_init", "adaptive.gamma_reg", "adaptive.gamma_lin", "adaptive.fraction"] {
        assert!(keys.iter().any(|x| x == k), "{k} not listed");
    }
    assert_eq!(keys.len(), 7);
}

#[test]
fn incompressible_material_is_rejected() {
    let text = SHIPPED.replace("material.poisson = 0.3", "material.poisson = 0.5");
    let err = parse_config(&text, no_env).unwrap_err();
    assert!(matches!(err, ConfigError::Range { ref key, .. } if key == "material.poisson"), "{err}");
}

#[test]
fn unknown_and_duplicate_keys_are_named() {
    let err = parse_config(&format!("{SHIPPED}\nadaptive.gama_reg = 0.1\n"), no_env).unwrap_err();
    assert_eq!(err, ConfigError::UnknownKey("adaptive.gama_reg".into()));
    let err = parse_config(&format!("{SHIPPED}\nmaterial.young = 2\n"), no_env).unwrap_err();
    assert_eq!(err, ConfigError::Duplicate("material.young".into()));
    assert!(err.to_string().contains("material.young"));
}

#[test]
fn malformed_values_and_lines_are_reported() {
    let err = parse_config(&SHIPPED.replace("nitsche.gamma0 = 100", "nitsche.gamma0 = lots"), no_env).unwrap_err();
    assert!(matches!(err, ConfigError::Parse { ref key, .. } if key == "nitsche.gamma0"));
    let err = parse_config(&format!("{SHIPPED}\nthis is not a pair\n"), no_env).unwrap_err();
    assert!(matches!(err, ConfigError::Syntax { .. }));
    let err = parse_config(&SHIPPED.replace("adaptive.fraction = 0.06", "adaptive.fraction = 0"), no_env).unwrap_err();
    assert!(matches!(err, ConfigError::Range { .. }));
    let err = parse_config(&SHIPPED.replace("adaptive.stopping = global", "adaptive.stopping = sometimes"), no_env).unwrap_err();
    assert!(matches!(err, ConfigError::Parse { ref key, .. } if key == "adaptive.stopping"));
}

#[test]
fn environment_overrides_file_values() {
    assert_eq!(env_name("material.young"), "CE_MATERIAL_YOUNG");
    let env: HashMap<String, String> =
        [("CE_MATERIAL_YOUNG", "3"), ("CE_ADAPTIVE_STOPPING", "local"), ("CE_OUTPUT_DIRECTORY", "elsewhere")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
    let cfg = parse_config(SHIPPED, |k| env.get(k).cloned()).unwrap();
    assert_eq!(cfg.benchmark.young, 3.0);
    assert_eq!(cfg.adaptive.mode, StoppingMode::Local { gamma_reg: 0.04, gamma_lin: 0.08 });
    assert_eq!(cfg.output.directory.to_str(), Some("elsewhere"));
    // an override can also supply a required key
    let text = SHIPPED.replace("material.young = 1", "");
    assert!(parse_config(&text, no_env).is_err());
    assert_eq!(parse_config(&text, |k| env.get(k).cloned()).unwrap().benchmark.young, 3.0);
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let text = format!("# header\n\n{}", SHIPPED.replace("material.young = 1", "material.young = 1   # modulus"));
    assert_eq!(parse_config(&text, no_env).unwrap().benchmark.young, 1.0);
}
