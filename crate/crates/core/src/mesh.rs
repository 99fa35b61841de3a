//! Conforming triangle meshes with tagged boundary faces.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate rectangle: [{x0}, {x1}] x [{y0}, {y1}]")]
    DegenerateRectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
    #[error("cell counts must be at least 1 (got nx={nx}, ny={ny})")]
    EmptyGrid { nx: usize, ny: usize },
    #[error("triangle {0} is not positively oriented or has zero area")]
    BadOrientation(usize),
    #[error("triangle {0} references vertex out of range")]
    VertexOutOfRange(usize),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("boundary edge ({0}, {1}) carries no tag")]
    UntaggedBoundary(usize, usize),
    #[error("tagged edge ({0}, {1}) is not a boundary edge of the mesh")]
    TagOnInteriorEdge(usize, usize),
    #[error("element index {0} out of range")]
    ElementOutOfRange(usize),
    #[error("mesh file: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
    Contact,
}

impl BoundaryTag {
    pub fn code(self) -> char {
        match self {
            BoundaryTag::Dirichlet => 'D',
            BoundaryTag::Neumann => 'N',
            BoundaryTag::Contact => 'C',
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "D" => Some(BoundaryTag::Dirichlet),
            "N" => Some(BoundaryTag::Neumann),
            "C" => Some(BoundaryTag::Contact),
            _ => None,
        }
    }
}

/// An edge of the triangulation.
///
/// `vertices` is sorted ascending. The unit `normal` is the tangent from the lower to the higher
/// vertex rotated clockwise, except on the boundary where it always points out of the domain.
/// `owner` is the element for which `normal` is outward.
#[derive(Clone, Debug)]
pub struct Face {
    pub vertices: [usize; 2],
    pub owner: usize,
    pub neighbor: Option<usize>,
    pub tag: Option<BoundaryTag>,
    pub normal: Point,
    pub length: f64,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.neighbor.is_none()
    }
}

/// Hat function of vertex `a` at parameter `s` along `face` (zero if `a` is not an endpoint).
pub fn face_param_weight(face: &Face, a: usize, s: f64) -> f64 {
    if face.vertices[0] == a {
        1.0 - s
    } else if face.vertices[1] == a {
        s
    } else {
        0.0
    }
}

/// Bookkeeping for a triangle created by green bisection, used to undo the bisection before the
/// pair is refined again.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GreenPair {
    pub sibling: usize,
    /// Parent vertices; `parent[1]`, `parent[2]` span the bisected edge.
    pub parent: [usize; 3],
    pub midpoint: usize,
}

#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    faces: Vec<Face>,
    element_faces: Vec<[usize; 3]>,
    areas: Vec<f64>,
    diameters: Vec<f64>,
    vertex_elements: Vec<Vec<usize>>,
    green: Vec<Option<GreenPair>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
}

fn sorted(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl TriMesh {
    /// Builds a mesh from counter-clockwise triangles and a tag for every boundary edge.
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary: &[([usize; 2], BoundaryTag)],
    ) -> Result<Self, MeshError> {
        let nv = vertices.len();
        let mut areas = Vec::with_capacity(triangles.len());
        let mut diameters = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(MeshError::VertexOutOfRange(t));
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let area = signed_area(a, b, c);
            let scale = dist(a, b).max(dist(b, c)).max(dist(c, a));
            if !(area > 1e-14 * scale * scale) {
                return Err(MeshError::BadOrientation(t));
            }
            areas.push(area);
            diameters.push(scale);
        }

        let mut tags: HashMap<(usize, usize), BoundaryTag> = HashMap::with_capacity(boundary.len());
        for &([a, b], tag) in boundary {
            tags.insert(sorted(a, b), tag);
        }

        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * triangles.len() / 2 + 4);
        let mut incident: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut keys: Vec<(usize, usize)> = Vec::new();
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                let key = sorted(tri[(i + 1) % 3], tri[(i + 2) % 3]);
                let id = *edge_index.entry(key).or_insert_with(|| {
                    incident.push(Vec::new());
                    keys.push(key);
                    incident.len() - 1
                });
                incident[id].push((t, i));
            }
        }

        let mut faces = Vec::with_capacity(keys.len());
        let mut element_faces = vec![[usize::MAX; 3]; triangles.len()];
        for (id, &(lo, hi)) in keys.iter().enumerate() {
            let inc = &incident[id];
            if inc.len() > 2 {
                return Err(MeshError::NonManifoldEdge(lo, hi));
            }
            let (pa, pb) = (vertices[lo], vertices[hi]);
            let length = dist(pa, pb);
            let mut normal = [(pb[1] - pa[1]) / length, -(pb[0] - pa[0]) / length];
            let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
            let outward_for = |t: usize, n: Point| {
                let opp = triangles[t].iter().copied().find(|&v| v != lo && v != hi).unwrap();
                let c = vertices[opp];
                n[0] * (c[0] - mid[0]) + n[1] * (c[1] - mid[1]) < 0.0
            };
            let (owner, neighbor, tag) = if inc.len() == 1 {
                let t = inc[0].0;
                if !outward_for(t, normal) {
                    normal = [-normal[0], -normal[1]];
                }
                let tag = *tags.get(&(lo, hi)).ok_or(MeshError::UntaggedBoundary(lo, hi))?;
                (t, None, Some(tag))
            } else {
                if tags.contains_key(&(lo, hi)) {
                    return Err(MeshError::TagOnInteriorEdge(lo, hi));
                }
                let (t0, t1) = (inc[0].0, inc[1].0);
                if outward_for(t0, normal) {
                    (t0, Some(t1), None)
                } else {
                    (t1, Some(t0), None)
                }
            };
            for &(t, i) in inc {
                element_faces[t][i] = id;
            }
            faces.push(Face { vertices: [lo, hi], owner, neighbor, tag, normal, length });
        }
        if tags.len() > faces.iter().filter(|f| f.is_boundary()).count() {
            let bad = tags
                .keys()
                .find(|k| edge_index.get(k).is_none_or(|&id| incident[id].len() != 1))
                .copied()
                .unwrap();
            return Err(MeshError::TagOnInteriorEdge(bad.0, bad.1));
        }

        let mut vertex_elements = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_elements[v].push(t);
            }
        }
        let n = triangles.len();
        Ok(TriMesh {
            vertices,
            triangles,
            faces,
            element_faces,
            areas,
            diameters,
            vertex_elements,
            green: vec![None; n],
        })
    }

    fn with_green(mut self, green: Vec<Option<GreenPair>>) -> Self {
        debug_assert_eq!(green.len(), self.triangles.len());
        self.green = green;
        self
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    /// Face ids of element `t`; entry `i` is the face opposite local vertex `i`.
    pub fn element_faces(&self, t: usize) -> [usize; 3] {
        self.element_faces[t]
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    /// Element diameter h_T (longest edge).
    pub fn diameter(&self, t: usize) -> f64 {
        self.diameters[t]
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn vertex_elements(&self, v: usize) -> &[usize] {
        &self.vertex_elements[v]
    }

    pub fn green_pair(&self, t: usize) -> Option<GreenPair> {
        self.green[t]
    }

    /// Unit normal of face `f` pointing out of element `t`.
    pub fn outward_normal(&self, t: usize, f: usize) -> Point {
        let face = &self.faces[f];
        if face.owner == t {
            face.normal
        } else {
            [-face.normal[0], -face.normal[1]]
        }
    }

    /// Point on face `f` at parameter `s` in [0, 1], measured from the lower vertex.
    pub fn face_point(&self, f: usize, s: f64) -> Point {
        let [lo, hi] = self.faces[f].vertices;
        let (a, b) = (self.vertices[lo], self.vertices[hi]);
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }

    pub fn boundary_faces(&self, tag: BoundaryTag) -> impl Iterator<Item = usize> + '_ {
        self.faces.iter().enumerate().filter(move |(_, f)| f.tag == Some(tag)).map(|(i, _)| i)
    }

    /// Faces of element `t` carrying `tag`.
    pub fn element_tagged_faces(&self, t: usize, tag: BoundaryTag) -> impl Iterator<Item = usize> + '_ {
        self.element_faces[t].into_iter().filter(move |&f| self.faces[f].tag == Some(tag))
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.vertex_elements[v].iter().any(|&t| {
            self.element_faces[t]
                .iter()
                .any(|&f| self.faces[f].is_boundary() && self.faces[f].vertices.contains(&v))
        })
    }

    /// Whether `v` lies on a Dirichlet face.
    pub fn touches_dirichlet(&self, v: usize) -> bool {
        self.vertex_elements[v].iter().any(|&t| {
            self.element_faces[t].iter().any(|&f| {
                self.faces[f].tag == Some(BoundaryTag::Dirichlet) && self.faces[f].vertices.contains(&v)
            })
        })
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn boundary_records(&self) -> Vec<([usize; 2], BoundaryTag)> {
        self.faces.iter().filter_map(|f| f.tag.map(|t| (f.vertices, t))).collect()
    }

    /// Conformity audit: every face has one or two incident triangles and every boundary face lies
    /// on the outer boundary (no vertex sits in the interior of another triangle's edge).
    pub fn is_conforming(&self) -> bool {
        for face in &self.faces {
            if !face.is_boundary() {
                continue;
            }
            let (a, b) = (self.vertices[face.vertices[0]], self.vertices[face.vertices[1]]);
            for (v, &p) in self.vertices.iter().enumerate() {
                if face.vertices.contains(&v) {
                    continue;
                }
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                let dot = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
                let len2 = face.length * face.length;
                if cross.abs() <= 1e-12 * len2 && dot > 1e-12 * len2 && dot < len2 * (1.0 - 1e-12) {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_text(&self) -> String {
        let boundary = self.boundary_records();
        let mut s = String::new();
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        let _ = writeln!(s, "boundary {}", boundary.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", p[0], p[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for ([a, b], tag) in boundary {
            let _ = writeln!(s, "{} {} {}", a, b, tag.code());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut tokens = text.split_whitespace().filter(|t| *t != "/");
        let mut header = |name: &str| -> Result<usize, MeshError> {
            match tokens.next() {
                Some(t) if t == name => {}
                other => return Err(MeshError::Parse(format!("expected `{name}`, found {other:?}"))),
            }
            tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| MeshError::Parse(format!("missing count after `{name}`")))
        };
        let nv = header("vertices")?;
        let nt = header("triangles")?;
        let nb = header("boundary")?;
        let mut next = |what: &str| tokens.next().ok_or_else(|| MeshError::Parse(format!("truncated {what} section")));
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let x: f64 = next("vertex")?.parse().map_err(|e| MeshError::Parse(format!("vertex: {e}")))?;
            let y: f64 = next("vertex")?.parse().map_err(|e| MeshError::Parse(format!("vertex: {e}")))?;
            vertices.push([x, y]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let mut tri = [0usize; 3];
            for v in &mut tri {
                *v = next("triangle")?.parse().map_err(|e| MeshError::Parse(format!("triangle: {e}")))?;
            }
            triangles.push(tri);
        }
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            let a: usize = next("boundary")?.parse().map_err(|e| MeshError::Parse(format!("boundary: {e}")))?;
            let b: usize = next("boundary")?.parse().map_err(|e| MeshError::Parse(format!("boundary: {e}")))?;
            let code = next("boundary")?;
            let tag = BoundaryTag::from_code(code).ok_or_else(|| MeshError::Parse(format!("unknown tag `{code}`")))?;
            boundary.push(([a, b], tag));
        }
        if let Some(extra) = tokens.next() {
            return Err(MeshError::Parse(format!("trailing token `{extra}`")));
        }
        TriMesh::new(vertices, triangles, &boundary)
    }
}

/// Structured mesh of `rect`; cells are split along the diagonal pointing away from the centre.
///
/// `tag_of` receives the midpoint of each boundary edge.
pub fn build_rect_mesh(
    nx: usize,
    ny: usize,
    rect: Rect,
    tag_of: impl Fn(Point) -> BoundaryTag,
) -> Result<TriMesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::EmptyGrid { nx, ny });
    }
    let Rect { x0, x1, y0, y1 } = rect;
    if !(x1 - x0 > 0.0) || !(y1 - y0 > 0.0) || !(x1 - x0).is_finite() || !(y1 - y0).is_finite() {
        return Err(MeshError::DegenerateRectangle { x0, x1, y0, y1 });
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx { x1 } else { x0 + (x1 - x0) * i as f64 / nx as f64 };
            let y = if j == ny { y1 } else { y0 + (y1 - y0) * j as f64 / ny as f64 };
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    // Union-jack diagonals: every corner of the rectangle lies on a diagonal, so no corner
    // vertex belongs to a single triangle (as long as nx, ny ≥ 2).
    for j in 0..ny {
        for i in 0..nx {
            if (2 * i + 1 < nx) == (2 * j + 1 < ny) {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            } else {
                triangles.push([id(i, j), id(i + 1, j), id(i, j + 1)]);
                triangles.push([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
    }
    let mut edges = Vec::new();
    for i in 0..nx {
        edges.push([id(i, 0), id(i + 1, 0)]);
        edges.push([id(i, ny), id(i + 1, ny)]);
    }
    for j in 0..ny {
        edges.push([id(0, j), id(0, j + 1)]);
        edges.push([id(nx, j), id(nx, j + 1)]);
    }
    let boundary: Vec<_> = edges
        .into_iter()
        .map(|[a, b]| {
            let (pa, pb) = (vertices[a], vertices[b]);
            ([a, b], tag_of([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0]))
        })
        .collect();
    TriMesh::new(vertices, triangles, &boundary)
}

/// Result of a refinement: the new mesh plus, for each vertex, the edge whose midpoint it is
/// (`None` for vertices inherited unchanged).
#[derive(Clone, Debug)]
pub struct Refinement {
    pub mesh: TriMesh,
    pub vertex_parents: Vec<Option<[usize; 2]>>,
}

impl Refinement {
    /// Interpolates nodal values (P1, `ncomp` components per vertex) onto the refined mesh.
    pub fn prolong_vertex_values(&self, values: &[f64], ncomp: usize) -> Vec<f64> {
        let n = self.vertex_parents.len();
        let mut out = vec![0.0; n * ncomp];
        out[..values.len()].copy_from_slice(values);
        for (v, parent) in self.vertex_parents.iter().enumerate() {
            if let Some([a, b]) = *parent {
                for c in 0..ncomp {
                    out[v * ncomp + c] = 0.5 * (out[a * ncomp + c] + out[b * ncomp + c]);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
struct WorkTri {
    v: [usize; 3],
    green: Option<GreenPair>,
    alive: bool,
    red: bool,
}

struct Refiner {
    vertices: Vec<Point>,
    parents: Vec<Option<[usize; 2]>>,
    midpoints: HashMap<(usize, usize), usize>,
    tags: HashMap<(usize, usize), BoundaryTag>,
    work: Vec<WorkTri>,
}

impl Refiner {
    fn split_edge(&mut self, a: usize, b: usize) -> (usize, bool) {
        let key = sorted(a, b);
        if let Some(&m) = self.midpoints.get(&key) {
            return (m, false);
        }
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let m = self.vertices.len();
        self.vertices.push([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0]);
        self.parents.push(Some([key.0, key.1]));
        self.midpoints.insert(key, m);
        if let Some(&tag) = self.tags.get(&key) {
            self.tags.insert(sorted(a, m), tag);
            self.tags.insert(sorted(m, b), tag);
        }
        (m, true)
    }

    fn split_count(&self, v: [usize; 3]) -> usize {
        (0..3).filter(|&i| self.midpoints.contains_key(&sorted(v[(i + 1) % 3], v[(i + 2) % 3]))).count()
    }

    /// Replaces a green pair by its parent, marked for red refinement.
    fn merge(&mut self, t: usize) {
        let g = self.work[t].green.expect("merge of a non-green triangle");
        self.work[t].alive = false;
        self.work[g.sibling].alive = false;
        self.midpoints.insert(sorted(g.parent[1], g.parent[2]), g.midpoint);
        self.work.push(WorkTri { v: g.parent, green: None, alive: true, red: true });
    }

    fn request_red(&mut self, t: usize) {
        if !self.work[t].alive {
            return;
        }
        if self.work[t].green.is_some() {
            self.merge(t);
        } else {
            self.work[t].red = true;
        }
    }

    fn red_split(&mut self, t: usize) {
        let [a, b, c] = self.work[t].v;
        let (mab, _) = self.split_edge(a, b);
        let (mbc, _) = self.split_edge(b, c);
        let (mca, _) = self.split_edge(c, a);
        self.work[t].alive = false;
        for v in [[a, mab, mca], [mab, b, mbc], [mca, mbc, c], [mab, mbc, mca]] {
            self.work.push(WorkTri { v, green: None, alive: true, red: false });
        }
    }

    fn close(&mut self) {
        loop {
            let mut changed = false;
            let mut i = 0;
            while i < self.work.len() {
                if self.work[i].alive {
                    if self.work[i].red {
                        self.red_split(i);
                        changed = true;
                    } else {
                        let count = self.split_count(self.work[i].v);
                        if count >= 1 && self.work[i].green.is_some() {
                            self.merge(i);
                            changed = true;
                        } else if count >= 2 {
                            self.work[i].red = true;
                            changed = true;
                        }
                    }
                }
                i += 1;
            }
            if !changed {
                break;
            }
        }
    }
}

/// Red refinement of the marked elements with red-green closure.
///
/// Green pairs left by earlier calls are merged back into their parent before they are refined
/// again, so repeated refinement does not degrade angles.
pub fn refine(mesh: &TriMesh, marked: &[usize]) -> Result<Refinement, MeshError> {
    if let Some(&bad) = marked.iter().find(|&&t| t >= mesh.n_elements()) {
        return Err(MeshError::ElementOutOfRange(bad));
    }
    let mut r = Refiner {
        vertices: mesh.vertices.clone(),
        parents: vec![None; mesh.n_vertices()],
        midpoints: HashMap::new(),
        tags: mesh.faces.iter().filter_map(|f| f.tag.map(|t| ((f.vertices[0], f.vertices[1]), t))).collect(),
        work: mesh
            .triangles
            .iter()
            .zip(&mesh.green)
            .map(|(&v, &green)| WorkTri { v, green, alive: true, red: false })
            .collect(),
    };
    let mut sorted_marked = marked.to_vec();
    sorted_marked.sort_unstable();
    sorted_marked.dedup();
    for t in sorted_marked {
        r.request_red(t);
    }
    r.close();

    let mut triangles = Vec::new();
    let mut green = Vec::new();
    let mut new_index = vec![usize::MAX; r.work.len()];
    for i in 0..r.work.len() {
        let w = &r.work[i];
        if !w.alive {
            continue;
        }
        let v = w.v;
        let split: Vec<usize> =
            (0..3).filter(|&k| r.midpoints.contains_key(&sorted(v[(k + 1) % 3], v[(k + 2) % 3]))).collect();
        match split.len() {
            0 => {
                new_index[i] = triangles.len();
                triangles.push(v);
                green.push(w.green);
            }
            1 => {
                let k = split[0];
                let (a, b, c) = (v[k], v[(k + 1) % 3], v[(k + 2) % 3]);
                let m = r.midpoints[&sorted(b, c)];
                let first = triangles.len();
                triangles.push([a, b, m]);
                triangles.push([a, m, c]);
                green.push(Some(GreenPair { sibling: first + 1, parent: [a, b, c], midpoint: m }));
                green.push(Some(GreenPair { sibling: first, parent: [a, b, c], midpoint: m }));
            }
            _ => unreachable!("closure left a triangle with several split edges"),
        }
    }
    // Inherited green pairs still reference work indices; fresh bisections already use output ones.
    let mut fixed_green = green;
    for i in 0..r.work.len() {
        let out = new_index[i];
        if out == usize::MAX {
            continue;
        }
        if let Some(pair) = r.work[i].green {
            let sib = new_index[pair.sibling];
            debug_assert!(sib != usize::MAX, "green sibling vanished");
            fixed_green[out] = Some(GreenPair { sibling: sib, ..pair });
        }
    }

    let boundary: Vec<([usize; 2], BoundaryTag)> = {
        let mut count: HashMap<(usize, usize), u8> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                *count.entry(sorted(t[(k + 1) % 3], t[(k + 2) % 3])).or_insert(0) += 1;
            }
        }
        let mut edges = Vec::new();
        for t in &triangles {
            for k in 0..3 {
                let key = sorted(t[(k + 1) % 3], t[(k + 2) % 3]);
                if count[&key] == 1 {
                    let tag = *r.tags.get(&key).ok_or(MeshError::UntaggedBoundary(key.0, key.1))?;
                    edges.push(([key.0, key.1], tag));
                }
            }
        }
        edges
    };
    let new_mesh = TriMesh::new(r.vertices, triangles, &boundary)?.with_green(fixed_green);
    Ok(Refinement { mesh: new_mesh, vertex_parents: r.parents })
}

/// Red refinement of every element with no green bookkeeping: the result is nested in `mesh`.
///
/// Returns the refined mesh and the parent element of every child.
pub fn uniform_refine(mesh: &TriMesh) -> Result<(TriMesh, Vec<usize>), MeshError> {
    let mut r = Refiner {
        vertices: mesh.vertices.clone(),
        parents: vec![None; mesh.n_vertices()],
        midpoints: HashMap::new(),
        tags: mesh.faces.iter().filter_map(|f| f.tag.map(|t| ((f.vertices[0], f.vertices[1]), t))).collect(),
        work: Vec::new(),
    };
    let mut triangles = Vec::with_capacity(4 * mesh.n_elements());
    let mut parent = Vec::with_capacity(4 * mesh.n_elements());
    for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
        let (mab, _) = r.split_edge(a, b);
        let (mbc, _) = r.split_edge(b, c);
        let (mca, _) = r.split_edge(c, a);
        triangles.extend([[a, mab, mca], [mab, b, mbc], [mca, mbc, c], [mab, mbc, mca]]);
        parent.extend([t; 4]);
    }
    let mut boundary = Vec::new();
    for f in &mesh.faces {
        if let Some(tag) = f.tag {
            let m = r.midpoints[&(f.vertices[0], f.vertices[1])];
            boundary.push(([f.vertices[0], m], tag));
            boundary.push(([m, f.vertices[1]], tag));
        }
    }
    Ok((TriMesh::new(r.vertices, triangles, &boundary)?, parent))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexKind {
    Interior,
    Boundary,
    /// Boundary vertex lying on a Dirichlet face.
    Dirichlet,
}

/// Where a face of a vertex patch sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchFaceKind {
    /// Shared by two elements of the patch.
    Inner,
    /// On the patch boundary but inside the domain.
    OuterInterior,
    /// On the patch boundary and on the domain boundary.
    OuterBoundary(BoundaryTag),
}

#[derive(Clone, Debug)]
pub struct VertexPatch {
    pub vertex: usize,
    pub kind: VertexKind,
    pub elements: Vec<usize>,
    /// Every face of every patch element, each listed once, with its classification.
    pub faces: Vec<(usize, PatchFaceKind)>,
}

impl VertexPatch {
    pub fn is_interior(&self) -> bool {
        self.kind == VertexKind::Interior
    }

    pub fn on_dirichlet(&self) -> bool {
        self.kind == VertexKind::Dirichlet
    }
}

pub fn vertex_patch(mesh: &TriMesh, a: usize) -> VertexPatch {
    let elements = mesh.vertex_elements(a).to_vec();
    let mut faces: Vec<(usize, PatchFaceKind)> = Vec::new();
    for &t in &elements {
        for f in mesh.element_faces(t) {
            if faces.iter().any(|&(g, _)| g == f) {
                continue;
            }
            let face = mesh.face(f);
            let both_in = face.neighbor.is_some_and(|n| elements.contains(&n)) && elements.contains(&face.owner);
            let kind = if both_in {
                PatchFaceKind::Inner
            } else if let Some(tag) = face.tag {
                PatchFaceKind::OuterBoundary(tag)
            } else {
                PatchFaceKind::OuterInterior
            };
            faces.push((f, kind));
        }
    }
    let kind = if mesh.touches_dirichlet(a) {
        VertexKind::Dirichlet
    } else if mesh.is_boundary_vertex(a) {
        VertexKind::Boundary
    } else {
        VertexKind::Interior
    };
    VertexPatch { vertex: a, kind, elements, faces }
}

/// Elements sharing at least one vertex with element `t` (including `t`), ascending.
pub fn element_star(mesh: &TriMesh, t: usize) -> Vec<usize> {
    let mut out: Vec<usize> = mesh.triangle(t).iter().flat_map(|&v| mesh.vertex_elements(v).iter().copied()).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Elements sharing at least one vertex with face `f`, ascending.
pub fn face_star(mesh: &TriMesh, f: usize) -> Vec<usize> {
    let mut out: Vec<usize> =
        mesh.face(f).vertices.iter().flat_map(|&v| mesh.vertex_elements(v).iter().copied()).collect();
    out.sort_unstable();
    out.dedup();
    out
}
