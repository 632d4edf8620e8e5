//! Structural and chemical side features fed to the denoiser: Laplacian
//! spectrum, closed-form cycle counts, valency and molecular weight.

use thiserror::Error;

use crate::molgraph::MolGraph;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("Jacobi eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
}

/// Per-node extras: X3, X4, X5, largest-component flag, two eigenvector entries, valency.
pub const NODE_EXTRA: usize = 7;
/// Graph extras: component count, five eigenvalues, y3..y6, weight/100, t/T.
pub const GRAPH_EXTRA: usize = 12;

const ZERO_EIGENVALUE: f64 = 1e-8;
const JACOBI_TOLERANCE: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 50;

/// Square matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Binary adjacency (bond order ignored) and degree vector.
pub fn adjacency(g: &MolGraph) -> (Matrix, Vec<f64>) {
    let n = g.n();
    let mut a = Matrix::zeros(n);
    for (i, j, _) in g.bonds() {
        a.set(i, j, 1.0);
        a.set(j, i, 1.0);
    }
    let d = (0..n).map(|i| (0..n).map(|j| a.get(i, j)).sum()).collect();
    (a, d)
}

/// Eigenpairs sorted by ascending eigenvalue; `vectors.get(i, k)` is entry `i` of eigenvector `k`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl Spectrum {
    pub fn zero_multiplicity(&self) -> usize {
        self.values.iter().filter(|&&v| v.abs() < ZERO_EIGENVALUE).count()
    }

    /// Indices of nonzero eigenvalues, ascending.
    pub fn nonzero(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).filter(|&k| self.values[k].abs() >= ZERO_EIGENVALUE)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eigen(m: &Matrix) -> Result<Spectrum, FeatureError> {
    let n = m.n;
    let mut a = m.clone();
    let mut v = Matrix::zeros(n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let off = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) >= JACOBI_TOLERANCE {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(FeatureError::NoConvergence(sweeps));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a.get(x, x).total_cmp(&a.get(y, y)));
    let values = order.iter().map(|&k| a.get(k, k)).collect();
    let mut vectors = Matrix::zeros(n);
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, col, v.get(i, k));
        }
    }
    Ok(Spectrum { values, vectors })
}

/// Spectrum of `L = diag(d) − A`.
pub fn laplacian_spectrum(a: &Matrix) -> Result<Spectrum, FeatureError> {
    let n = a.n;
    let mut l = Matrix::zeros(n);
    for i in 0..n {
        let d: f64 = (0..n).map(|j| a.get(i, j)).sum();
        for j in 0..n {
            l.set(i, j, if i == j { d } else { -a.get(i, j) });
        }
    }
    symmetric_eigen(&l)
}

/// Per-node counts of 3-, 4- and 5-cycles through each node and whole-graph counts of 3- to 6-cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleCounts {
    pub x3: Vec<f64>,
    pub x4: Vec<f64>,
    pub x5: Vec<f64>,
    pub y3: f64,
    pub y4: f64,
    pub y5: f64,
    pub y6: f64,
}

/// Closed-form simple-cycle counts from powers of the adjacency matrix.
pub fn cycle_counts(a: &Matrix, d: &[f64]) -> CycleCounts {
    let n = a.n;
    let a2 = a.mul(a);
    let a3 = a2.mul(a);
    let a4 = a3.mul(a);
    let a5 = a4.mul(a);
    let a6 = a5.mul(a);
    let t = a3.diag();
    let d4 = a4.diag();
    let d5 = a5.diag();
    let ad = a.mul_vec(d);
    let at = a.mul_vec(&t);
    // Walks i→j→k→i weighted by deg(j): (A ⊙ A²)·d
    let s: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.get(i, j) * a2.get(i, j) * d[j]).sum()).collect();

    let x3: Vec<f64> = t.iter().map(|v| v / 2.0).collect();
    let x4: Vec<f64> = (0..n).map(|i| (d4[i] - d[i] * (d[i] - 1.0) - ad[i]) / 2.0).collect();
    let x5: Vec<f64> =
        (0..n).map(|i| (d5[i] - 2.0 * d[i] * t[i] - 2.0 * s[i] - at[i] + 5.0 * t[i]) / 2.0).collect();

    let dd = a2.diag();
    let tri_sq: f64 = t.iter().map(|v| v * v).sum();
    let mut a_a2_a2 = 0.0;
    for i in 0..n * n {
        a_a2_a2 += a.data[i] * a2.data[i] * a2.data[i];
    }
    let dd_d4: f64 = dd.iter().zip(&d4).map(|(x, y)| x * y).sum();
    let dd3: f64 = dd.iter().map(|x| x.powi(3)).sum();
    let dd2: f64 = dd.iter().map(|x| x * x).sum();
    let y6 = (a6.trace() - 3.0 * tri_sq + 9.0 * a_a2_a2 - 6.0 * dd_d4 + 6.0 * a4.trace() - 4.0 * a3.trace()
        + 4.0 * dd3
        + 3.0 * a3.sum()
        - 12.0 * dd2
        + 4.0 * a2.trace())
        / 12.0;

    CycleCounts {
        y3: x3.iter().sum::<f64>() / 3.0,
        y4: x4.iter().sum::<f64>() / 4.0,
        y5: x5.iter().sum::<f64>() / 5.0,
        y6,
        x3,
        x4,
        x5,
    }
}

/// Per-node incident bond-order sum and total atomic mass of real atoms.
pub fn chemical_features(g: &MolGraph) -> (Vec<f64>, f64) {
    let valency = (0..g.n()).map(|i| g.bond_order_sum(i) as f64).collect();
    let weight = g.atoms().iter().filter_map(|a| a.element()).map(|e| e.mass()).sum();
    (valency, weight)
}

/// Flags every node of each maximum-size connected component.
pub fn largest_component_indicator(g: &MolGraph) -> Vec<f64> {
    let comps = g.components();
    let best = comps.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = vec![0.0; g.n()];
    for c in comps.iter().filter(|c| c.len() == best) {
        for &i in c {
            out[i] = 1.0;
        }
    }
    out
}

/// Flips an eigenvector so its largest-magnitude entry is positive.
fn sign_fixed(v: &mut [f64]) {
    let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePack {
    pub n: usize,
    /// `n × NODE_EXTRA`, row-major.
    pub node_extra: Vec<f64>,
    pub graph_extra: Vec<f64>,
}

impl FeaturePack {
    pub fn node_row(&self, i: usize) -> &[f64] {
        &self.node_extra[i * NODE_EXTRA..(i + 1) * NODE_EXTRA]
    }
}

/// All side features of a (possibly noisy) graph at diffusion time `t / steps`.
pub fn compute_features(g: &MolGraph, t: usize, steps: usize) -> Result<FeaturePack, FeatureError> {
    let n = g.n();
    let (a, d) = adjacency(g);
    let spectrum = laplacian_spectrum(&a)?;
    let cycles = cycle_counts(&a, &d);
    let (valency, weight) = chemical_features(g);
    let largest = largest_component_indicator(g);

    let nonzero: Vec<usize> = spectrum.nonzero().collect();
    let mut eig_vectors = [vec![0.0; n], vec![0.0; n]];
    for (slot, &k) in eig_vectors.iter_mut().zip(&nonzero) {
        for (i, x) in slot.iter_mut().enumerate() {
            *x = spectrum.vectors.get(i, k);
        }
        sign_fixed(slot);
    }

    let mut node_extra = Vec::with_capacity(n * NODE_EXTRA);
    for i in 0..n {
        node_extra.extend_from_slice(&[
            cycles.x3[i],
            cycles.x4[i],
            cycles.x5[i],
            largest[i],
            eig_vectors[0][i],
            eig_vectors[1][i],
            valency[i],
        ]);
    }
    let mut graph_extra = Vec::with_capacity(GRAPH_EXTRA);
    graph_extra.push(spectrum.zero_multiplicity() as f64);
    for k in 0..5 {
        graph_extra.push(nonzero.get(k).map_or(0.0, |&idx| spectrum.values[idx]));
    }
    graph_extra.extend_from_slice(&[cycles.y3, cycles.y4, cycles.y5, cycles.y6, weight / 100.0]);
    graph_extra.push(if steps == 0 { 0.0 } else { t as f64 / steps as f64 });
    Ok(FeaturePack { n, node_extra, graph_extra })
}

/// Brute-force simple-cycle enumeration, used as an oracle for [`cycle_counts`].
/// Returns per-node counts for lengths 3..=5 and totals for 3..=6.
pub fn enumerate_cycles(a: &Matrix) -> ([Vec<f64>; 3], [f64; 4]) {
    let n = a.n;
    let mut per = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tot = [0.0; 4];
    let mut path = Vec::with_capacity(6);
    let mut used = vec![false; n];
    fn extend(
        a: &Matrix,
        path: &mut Vec<usize>,
        used: &mut [bool],
        per: &mut [Vec<f64>; 3],
        tot: &mut [f64; 4],
    ) {
        let start = path[0];
        let last = *path.last().unwrap();
        let k = path.len();
        // close the cycle; the second vertex < the last vertex fixes the direction
        if k >= 3 && a.get(last, start) > 0.0 && path[1] < last {
            tot[k - 3] += 1.0;
            if k <= 5 {
                for &v in path.iter() {
                    per[k - 3][v] += 1.0;
                }
            }
        }
        if k == 6 {
            return;
        }
        for next in start + 1..a.n {
            if !used[next] && a.get(last, next) > 0.0 {
                used[next] = true;
                path.push(next);
                extend(a, path, used, per, tot);
                path.pop();
                used[next] = false;
            }
        }
    }
    for start in 0..n {
        used[start] = true;
        path.push(start);
        extend(a, &mut path, &mut used, &mut per, &mut tot);
        path.pop();
        used[start] = false;
    }
    (per, tot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{parse_molecule, Atom, NodeTag};

    fn graph(s: &str) -> MolGraph {
        parse_molecule(s).unwrap().graph
    }

    #[test]
    fn adjacency_basics() {
        let (a, d) = adjacency(&graph("C1CC1"));
        assert_eq!(d, vec![2.0, 2.0, 2.0]);
        assert_eq!(a.sum(), 6.0);
        let (a, _) = adjacency(&MolGraph::new());
        assert_eq!(a.n, 0);
        let (_, d) = adjacency(&graph("C=O"));
        assert_eq!(d, vec![1.0, 1.0]);
    }

    #[test]
    fn spectra() {
        let (a, _) = adjacency(&graph("CC"));
        let s = laplacian_spectrum(&a).unwrap();
        assert!(s.values[0].abs() < 1e-12 && (s.values[1] - 2.0).abs() < 1e-12);
        let (a, _) = adjacency(&graph("CC.CC"));
        assert_eq!(laplacian_spectrum(&a).unwrap().zero_multiplicity(), 2);
        let (a, _) = adjacency(&MolGraph::new());
        assert!(laplacian_spectrum(&a).unwrap().values.is_empty());
    }

    #[test]
    fn eigenpairs_satisfy_definition() {
        let g = graph("CC1CC(O)C2CCCC12");
        let (a, d) = adjacency(&g);
        let s = laplacian_spectrum(&a).unwrap();
        let n = g.n();
        for k in 0..n {
            let v: Vec<f64> = (0..n).map(|i| s.vectors.get(i, k)).collect();
            let av = a.mul_vec(&v);
            for i in 0..n {
                let lv = d[i] * v[i] - av[i];
                assert!((lv - s.values[k] * v[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn small_cycles() {
        let (a, d) = adjacency(&graph("C1CC1"));
        let c = cycle_counts(&a, &d);
        assert_eq!((c.x3.clone(), c.y3), (vec![1.0; 3], 1.0));
        let (a, d) = adjacency(&graph("C1CCC1"));
        let c = cycle_counts(&a, &d);
        assert_eq!((c.x4.clone(), c.y4), (vec![1.0; 4], 1.0));
        let (a, d) = adjacency(&graph("C1CCCCC1"));
        assert!((cycle_counts(&a, &d).y6 - 1.0).abs() < 1e-9);
        let (a, d) = adjacency(&graph("CC(C)C(CC)CO"));
        let c = cycle_counts(&a, &d);
        assert!(c.x3.iter().chain(&c.x4).chain(&c.x5).all(|&v| v == 0.0));
        assert_eq!([c.y3, c.y4, c.y5, c.y6], [0.0; 4]);
    }

    #[test]
    fn closed_forms_match_enumeration_on_fused_rings() {
        // K4 plus pendant chains: triangles next to 5-cycles, where the
        // uncorrected 5-cycle formula fails.
        for s in ["C12C3C1C23", "C1CC2C1CC2", "C1C2CC3C1C23", "C12C3C4C1C234"] {
            let (a, d) = adjacency(&graph(s));
            let c = cycle_counts(&a, &d);
            let (per, tot) = enumerate_cycles(&a);
            for (f, b) in [&c.x3, &c.x4, &c.x5].iter().zip(&per) {
                for (x, y) in f.iter().zip(b) {
                    assert!((x - y).abs() < 1e-9, "{s}");
                }
            }
            for (x, y) in [c.y3, c.y4, c.y5, c.y6].iter().zip(&tot) {
                assert!((x - y).abs() < 1e-9, "{s}");
            }
        }
    }

    #[test]
    fn chemistry() {
        let (v, w) = chemical_features(&graph("C=CC"));
        assert_eq!(v[1], 3.0);
        assert!((w - 3.0 * 12.011).abs() < 1e-12);
        let (_, w) = chemical_features(&graph("O=C=O"));
        assert!((w - 44.009).abs() < 1e-9);
        let mut g = graph("C");
        g.add_atom(Atom::Dummy, NodeTag::Dummy);
        assert_eq!(chemical_features(&g).1, 12.011);
    }

    #[test]
    fn pack_shapes_and_components() {
        let mut g = graph("CCO.C");
        g.add_atom(Atom::Dummy, NodeTag::Dummy);
        let f = compute_features(&g, 5, 10).unwrap();
        assert_eq!(f.node_extra.len(), 5 * NODE_EXTRA);
        assert_eq!(f.graph_extra.len(), GRAPH_EXTRA);
        assert_eq!(f.graph_extra[0], 3.0);
        assert_eq!(f.graph_extra[11], 0.5);
        let largest: Vec<f64> = (0..5).map(|i| f.node_row(i)[3]).collect();
        assert_eq!(largest, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(f.node_extra.iter().chain(&f.graph_extra).all(|x| x.is_finite()));
    }
}
