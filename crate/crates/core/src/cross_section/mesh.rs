use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Triangulated cross-section with a per-triangle flag for the nematic
/// subdomain `S₀`. Triangles are stored counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    in_s0: Vec<bool>,
    areas: Vec<f64>,
}

/// Summary numbers written next to computed coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub vertices: usize,
    pub triangles: usize,
    pub triangles_in_s0: usize,
    pub area: f64,
    pub h_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_order: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknowns: Option<usize>,
}

impl CrossSectionMesh {
    /// Validates indices and orientation (clockwise triangles are flipped),
    /// translates the centroid to the origin and rejects meshes whose product
    /// moment `∫x₂x₃` does not vanish.
    pub fn new(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, in_s0: Vec<bool>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::Mesh("mesh has no triangles".into()));
        }
        if in_s0.len() != triangles.len() {
            return Err(Error::Mesh("one subdomain flag per triangle is required".into()));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Mesh("non-finite vertex coordinate".into()));
        }
        let mut tris = triangles;
        let mut areas = Vec::with_capacity(tris.len());
        for (k, t) in tris.iter_mut().enumerate() {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::Mesh(format!("triangle {k} references a missing vertex")));
            }
            let a = signed_area(&vertices, t);
            if a == 0.0 {
                return Err(Error::Mesh(format!("triangle {k} is degenerate")));
            }
            if a < 0.0 {
                t.swap(1, 2);
            }
            areas.push(a.abs());
        }
        let mut mesh = CrossSectionMesh { vertices, triangles: tris, in_s0, areas };
        let total = mesh.area();
        let [m2, m3] = mesh.first_moments();
        let (c2, c3) = (m2 / total, m3 / total);
        for v in &mut mesh.vertices {
            v[0] -= c2;
            v[1] -= c3;
        }
        let [s22, s33, s23] = mesh.second_moments();
        if s23.abs() > 1e-9 * (s22 + s33) {
            return Err(Error::Mesh(format!(
                "cross-section is not aligned with its principal axes (∫x2·x3 = {s23:e})"
            )));
        }
        Ok(mesh)
    }

    /// Hexagonal ring triangulation of the unit-area disc of radius `π^{-1/2}`
    /// with `rings` rings (`6·rings²` triangles). All boundary vertices lie on
    /// the circle, the diameter `x₃ = 0` is a union of edges, and `S₀` is the
    /// upper half `x₃ > 0`.
    pub fn disc_halfplane(rings: usize) -> Result<Self> {
        if rings == 0 {
            return Err(Error::InvalidArgument("disc mesh needs at least one ring".into()));
        }
        let r = std::f64::consts::PI.powf(-0.5);
        let mut vertices = vec![[0.0, 0.0]];
        let mut start = vec![0usize];
        for k in 1..=rings {
            start.push(vertices.len());
            let m = 6 * k;
            for j in 0..m {
                let th = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                let rad = r * k as f64 / rings as f64;
                let (s, c) = th.sin_cos();
                vertices.push([rad * c, rad * s]);
            }
        }
        let vid = |k: usize, j: usize| if k == 0 { 0 } else { start[k] + j % (6 * k) };
        let mut triangles = Vec::with_capacity(6 * rings * rings);
        for k in 1..=rings {
            for s in 0..6 {
                for i in 0..k {
                    let in0 = vid(k - 1, s * (k - 1) + i);
                    triangles.push([in0, vid(k, s * k + i), vid(k, s * k + i + 1)]);
                    if i + 1 < k {
                        triangles.push([in0, vid(k, s * k + i + 1), vid(k - 1, s * (k - 1) + i + 1)]);
                    }
                }
            }
        }
        let flags = upper_half_flags(&vertices, &triangles);
        CrossSectionMesh::new(vertices, triangles, flags)
    }

    /// Disc mesh at refinement level `level` (`8·2^level` rings).
    pub fn disc_halfplane_level(level: u32) -> Result<Self> {
        if level > 6 {
            return Err(Error::InvalidArgument(format!("refinement level {level} is too large")));
        }
        Self::disc_halfplane(8 << level)
    }

    /// The unit square `(−½, ½)²` cut into `n×n` cells, each split into four
    /// triangles at its center; `S₀` is the upper half. `n` must be even so
    /// that `x₃ = 0` is resolved by edges.
    pub fn square_halfplane(n: usize) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return Err(Error::InvalidArgument("square mesh needs an even, positive cell count".into()));
        }
        let h = 1.0 / n as f64;
        let mut vertices = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                vertices.push([-0.5 + j as f64 * h, -0.5 + i as f64 * h]);
            }
        }
        let corner = |i: usize, j: usize| i * (n + 1) + j;
        let mut triangles = Vec::with_capacity(4 * n * n);
        for i in 0..n {
            for j in 0..n {
                let c = vertices.len();
                vertices.push([-0.5 + (j as f64 + 0.5) * h, -0.5 + (i as f64 + 0.5) * h]);
                let (a, b, d, e) = (corner(i, j), corner(i, j + 1), corner(i + 1, j + 1), corner(i + 1, j));
                triangles.extend([[a, b, c], [b, d, c], [d, e, c], [e, a, c]]);
            }
        }
        let flags = upper_half_flags(&vertices, &triangles);
        CrossSectionMesh::new(vertices, triangles, flags)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn in_s0(&self) -> &[bool] {
        &self.in_s0
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Corner coordinates of triangle `t`.
    pub fn corners(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.triangles[t];
        [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]]
    }

    /// `(∫x₂, ∫x₃)`.
    pub fn first_moments(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for t in 0..self.n_triangles() {
            let p = self.corners(t);
            for a in 0..2 {
                m[a] += self.areas[t] * (p[0][a] + p[1][a] + p[2][a]) / 3.0;
            }
        }
        m
    }

    /// `(∫x₂², ∫x₃², ∫x₂x₃)`, exact for the polygon.
    pub fn second_moments(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for t in 0..self.n_triangles() {
            let p = self.corners(t);
            let f = |a: usize, b: usize| {
                let s: f64 = (0..3).map(|i| p[i][a]).sum::<f64>() * (0..3).map(|i| p[i][b]).sum::<f64>()
                    + (0..3).map(|i| p[i][a] * p[i][b]).sum::<f64>();
                self.areas[t] * s / 12.0
            };
            m[0] += f(0, 0);
            m[1] += f(1, 1);
            m[2] += f(0, 1);
        }
        m
    }

    pub fn h_max(&self) -> f64 {
        let mut h = 0.0f64;
        for t in 0..self.n_triangles() {
            let p = self.corners(t);
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                h = h.max(((p[a][0] - p[b][0]).powi(2) + (p[a][1] - p[b][1]).powi(2)).sqrt());
            }
        }
        h
    }

    pub fn stats(&self) -> MeshStats {
        MeshStats {
            vertices: self.vertices.len(),
            triangles: self.n_triangles(),
            triangles_in_s0: self.in_s0.iter().filter(|&&f| f).count(),
            area: self.area(),
            h_max: self.h_max(),
            element_order: None,
            unknowns: None,
        }
    }

    /// Plain-text form: optional `#` comment lines, then
    /// `vertices N` followed by N lines `x2 x3`, then `triangles M` followed
    /// by M lines `i j k flag` (zero-based indices, flag 1 inside S₀).
    pub fn to_text(&self) -> String {
        let mut s = String::from("# cross-section mesh: vertices (x2 x3), triangles (i j k flag), flag 1 = inside S0\n");
        writeln!(s, "vertices {}", self.vertices.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{:.17e} {:.17e}", v[0], v[1]).unwrap();
        }
        writeln!(s, "triangles {}", self.triangles.len()).unwrap();
        for (t, f) in self.triangles.iter().zip(&self.in_s0) {
            writeln!(s, "{} {} {} {}", t[0], t[1], t[2], *f as u8).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut header = |name: &str| -> Result<usize> {
            let (no, l) = lines.next().ok_or_else(|| Error::Parse(format!("missing '{name}' header")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(Error::Parse(format!("line {}: expected '{name} <count>'", no + 1)));
            }
            it.next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::Parse(format!("line {}: bad count", no + 1)))
        };
        let nv = header("vertices")?;
        let mut rows = Vec::with_capacity(nv);
        for _ in 0..nv {
            rows.push(lines.next());
        }
        let mut vertices = Vec::with_capacity(nv);
        for r in rows {
            let (no, l) = r.ok_or_else(|| Error::Parse("vertex block ended early".into()))?;
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", no + 1)))?;
            if v.len() != 2 {
                return Err(Error::Parse(format!("line {}: expected two coordinates", no + 1)));
            }
            vertices.push([v[0], v[1]]);
        }
        let mut lines = lines;
        let (no, l) = lines.next().ok_or_else(|| Error::Parse("missing 'triangles' header".into()))?;
        let mut it = l.split_whitespace();
        if it.next() != Some("triangles") {
            return Err(Error::Parse(format!("line {}: expected 'triangles <count>'", no + 1)));
        }
        let nt: usize = it
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| Error::Parse(format!("line {}: bad count", no + 1)))?;
        let mut triangles = Vec::with_capacity(nt);
        let mut flags = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (no, l) = lines.next().ok_or_else(|| Error::Parse("triangle block ended early".into()))?;
            let v: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", no + 1)))?;
            if v.len() != 4 || v[3] > 1 {
                return Err(Error::Parse(format!("line {}: expected 'i j k flag' with flag 0 or 1", no + 1)));
            }
            triangles.push([v[0], v[1], v[2]]);
            flags.push(v[3] == 1);
        }
        if let Some((no, _)) = lines.next() {
            return Err(Error::Parse(format!("line {}: unexpected trailing data", no + 1)));
        }
        CrossSectionMesh::new(vertices, triangles, flags)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

fn signed_area(v: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let (a, b, c) = (v[t[0]], v[t[1]], v[t[2]]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn upper_half_flags(v: &[[f64; 2]], tris: &[[usize; 3]]) -> Vec<bool> {
    tris.iter().map(|t| v[t[0]][1] + v[t[1]][1] + v[t[2]][1] > 0.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_mesh_geometry() {
        let m = CrossSectionMesh::disc_halfplane(16).unwrap();
        assert_eq!(m.n_triangles(), 6 * 16 * 16);
        let r = std::f64::consts::PI.powf(-0.5);
        let max_r = m.vertices().iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
        assert!((max_r - r).abs() < 1e-15);
        // Inscribed polygon: area slightly below one, converging like h².
        assert!(m.area() < 1.0 && m.area() > 0.99);
        let s0_area: f64 = m.areas().iter().zip(m.in_s0()).filter(|(_, &f)| f).map(|(a, _)| a).sum();
        assert!((s0_area - 0.5 * m.area()).abs() < 1e-12);
        // No triangle straddles x3 = 0.
        for t in 0..m.n_triangles() {
            let p = m.corners(t);
            let lo = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
            let hi = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
            assert!(lo >= -1e-15 || hi <= 1e-15);
        }
        let [m2, m3] = m.first_moments();
        assert!(m2.abs() < 1e-14 && m3.abs() < 1e-14);
        assert!(CrossSectionMesh::disc_halfplane_level(3).unwrap().n_triangles() >= 20_000);
    }

    #[test]
    fn square_moments_are_exact() {
        let m = CrossSectionMesh::square_halfplane(4).unwrap();
        let [s22, s33, s23] = m.second_moments();
        assert!((m.area() - 1.0).abs() < 1e-14);
        assert!((s22 - 1.0 / 12.0).abs() < 1e-14 && (s33 - 1.0 / 12.0).abs() < 1e-14);
        assert!(s23.abs() < 1e-15);
        assert!(CrossSectionMesh::square_halfplane(3).is_err());
    }

    #[test]
    fn text_round_trip_and_recentering() {
        let m = CrossSectionMesh::square_halfplane(2).unwrap();
        let back = CrossSectionMesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.in_s0(), m.in_s0());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
        // A shifted copy is moved back to its centroid.
        let shifted: Vec<[f64; 2]> = m.vertices().iter().map(|v| [v[0] + 3.0, v[1] - 1.0]).collect();
        let c = CrossSectionMesh::new(shifted, m.triangles().to_vec(), m.in_s0().to_vec()).unwrap();
        for (a, b) in c.vertices().iter().zip(m.vertices()) {
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_meshes() {
        assert!(CrossSectionMesh::from_text("vertices 1\n0 0\ntriangles 1\n0 1 2 0\n").is_err());
        assert!(CrossSectionMesh::from_text("vertices 3\n0 0\n1 0\n2 0\ntriangles 1\n0 1 2 0\n").is_err());
        assert!(CrossSectionMesh::from_text("vertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 2 7\n").is_err());
        // A single right triangle has a nonzero product moment.
        assert!(CrossSectionMesh::from_text("vertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 2 0\n").is_err());
    }
}
