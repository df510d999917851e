//! Physical microgrid model: droop-controlled IBR dynamics, the nonlinear
//! real-power network constraints, their linearization around an operating
//! point, Kron reduction of the load nodes and assembly of the continuous
//! linear plant `ẋ = A x + B₁ Δω_s + F ΔP_L`.
//!
//! Node ordering convention: the first `n_ibr` nodes host inverters, the
//! remaining `n_load` nodes are loads or points of common coupling.

use std::f64::consts::PI;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, max_abs, singular_value_range, Mat, Vector};

pub const DEFAULT_OMEGA_C: f64 = 31.41;
pub const DEFAULT_M_P: f64 = 9.4e-5;
pub const DEFAULT_NOMINAL_HZ: f64 = 50.0;

/// Power-flow convergence tolerance, relative to the largest injection.
pub const OPERATING_POINT_TOL: f64 = 1e-10;
pub const OPERATING_POINT_MAX_ITER: usize = 50;

/// Droop and filter parameters of one inverter-based resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbrParams {
    /// Power-calculator low-pass cutoff (rad/s).
    pub omega_c: f64,
    /// Droop coefficient (rad/s per W).
    pub m_p: f64,
    /// Nominal frequency (rad/s).
    pub omega_nom: f64,
    /// Steady-state real power output (W).
    pub p_g_star: f64,
    /// Setpoint that holds nominal frequency at `p_g_star` (rad/s).
    pub omega_s_star: f64,
}

impl IbrParams {
    pub fn new(omega_c: f64, m_p: f64, omega_nom: f64, p_g_star: f64) -> Result<Self> {
        if !(omega_c > 0.0) || !omega_c.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "omega_c must be positive, got {omega_c}"
            )));
        }
        if !(m_p > 0.0) || !m_p.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "m_p must be positive, got {m_p}"
            )));
        }
        Ok(Self {
            omega_c,
            m_p,
            omega_nom,
            p_g_star,
            omega_s_star: omega_nom + m_p * p_g_star,
        })
    }

    /// Default inverter at the given nominal frequency in Hz.
    pub fn default_at(nominal_hz: f64) -> Self {
        Self::new(DEFAULT_OMEGA_C, DEFAULT_M_P, 2.0 * PI * nominal_hz, 0.0)
            .expect("default parameters are valid")
    }

    /// Same inverter re-anchored at a new steady-state output.
    pub fn with_operating_power(&self, p_g_star: f64) -> Self {
        Self {
            p_g_star,
            omega_s_star: self.omega_nom + self.m_p * p_g_star,
            ..self.clone()
        }
    }
}

/// Angle and frequency deviation of one inverter.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IbrState {
    pub delta: f64,
    pub omega: f64,
}

/// Off-diagonal bus-admittance entry `Y∠θ` between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Magnitude (S).
    pub y: f64,
    /// Angle (rad). A lossless inductive line has θ = π/2.
    pub theta: f64,
}

impl Branch {
    /// Lossless inductive branch with admittance magnitude `y`.
    pub fn reactive(from: usize, to: usize, y: f64) -> Self {
        Self {
            from,
            to,
            y,
            theta: PI / 2.0,
        }
    }

    /// Branch from a series impedance `r + jx`. Returns the branch and the
    /// series conductance that must be added to both endpoints' `g_ii`.
    pub fn from_impedance(from: usize, to: usize, r: f64, x: f64) -> Result<(Self, f64)> {
        let z = Complex::new(r, x);
        if z.norm() == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "zero impedance between nodes {from} and {to}"
            )));
        }
        let series = z.inv();
        let off_diag = -series;
        Ok((
            Self {
                from,
                to,
                y: off_diag.norm(),
                theta: off_diag.arg(),
            },
            series.re,
        ))
    }
}

/// Network topology and nominal voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    n_ibr: usize,
    n_load: usize,
    names: Vec<String>,
    branches: Vec<Branch>,
    g_self: Vec<f64>,
    v_star: Vec<f64>,
    y_mag: Mat,
    theta: Mat,
}

impl NetworkSpec {
    pub fn new(
        n_ibr: usize,
        n_load: usize,
        branches: Vec<Branch>,
        g_self: Vec<f64>,
        v_star: Vec<f64>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = n_ibr + n_load;
        if g_self.len() != n {
            return Err(Error::dim("network g_self", n, g_self.len()));
        }
        if v_star.len() != n {
            return Err(Error::dim("network v_star", n, v_star.len()));
        }
        if let Some(v) = v_star.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "nominal voltages must be positive, got {v}"
            )));
        }
        let names = match names {
            Some(names) if names.len() != n => {
                return Err(Error::dim("network names", n, names.len()))
            }
            Some(names) => names,
            None => (0..n)
                .map(|i| {
                    if i < n_ibr {
                        format!("ibr{}", i + 1)
                    } else {
                        format!("bus{}", i - n_ibr + 1)
                    }
                })
                .collect(),
        };
        let mut re = Mat::zeros(n, n);
        let mut im = Mat::zeros(n, n);
        for b in &branches {
            if b.from >= n || b.to >= n {
                return Err(Error::InvalidParameter(format!(
                    "branch {}-{} references a node outside 0..{n}",
                    b.from, b.to
                )));
            }
            if b.from == b.to {
                return Err(Error::InvalidParameter(format!(
                    "branch {}-{} is a self loop",
                    b.from, b.to
                )));
            }
            if !(b.y >= 0.0) || !b.theta.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "branch {}-{} has invalid admittance {}∠{}",
                    b.from, b.to, b.y, b.theta
                )));
            }
            let (c, s) = (b.y * b.theta.cos(), b.y * b.theta.sin());
            re[(b.from, b.to)] += c;
            re[(b.to, b.from)] += c;
            im[(b.from, b.to)] += s;
            im[(b.to, b.from)] += s;
        }
        let y_mag = re.zip_map(&im, |r, i| r.hypot(i));
        let theta = im.zip_map(&re, |i, r| if i == 0.0 && r == 0.0 { 0.0 } else { i.atan2(r) });
        Ok(Self {
            n_ibr,
            n_load,
            names,
            branches,
            g_self,
            v_star,
            y_mag,
            theta,
        })
    }

    pub fn n_ibr(&self) -> usize {
        self.n_ibr
    }

    pub fn n_load(&self) -> usize {
        self.n_load
    }

    pub fn n_nodes(&self) -> usize {
        self.n_ibr + self.n_load
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn g_self(&self) -> &[f64] {
        &self.g_self
    }

    pub fn v_star(&self) -> &[f64] {
        &self.v_star
    }

    /// Aggregate admittance magnitude between two nodes.
    pub fn y(&self, i: usize, k: usize) -> f64 {
        self.y_mag[(i, k)]
    }

    /// Aggregate admittance angle between two nodes.
    pub fn theta(&self, i: usize, k: usize) -> f64 {
        self.theta[(i, k)]
    }

    /// Copy of this network with one more branch.
    pub fn with_branch(&self, branch: Branch, extra_conductance: f64) -> Result<Self> {
        let mut branches = self.branches.clone();
        let mut g = self.g_self.clone();
        if branch.from < g.len() && branch.to < g.len() {
            g[branch.from] += extra_conductance;
            g[branch.to] += extra_conductance;
        }
        branches.push(branch);
        Self::new(
            self.n_ibr,
            self.n_load,
            branches,
            g,
            self.v_star.clone(),
            Some(self.names.clone()),
        )
    }

    /// Disjoint union of several networks, keeping the IBR-first ordering.
    /// Returns the merged network and, per part, the map from local to
    /// merged node index.
    pub fn union(parts: &[&NetworkSpec]) -> Result<(NetworkSpec, Vec<Vec<usize>>)> {
        let n_ibr: usize = parts.iter().map(|p| p.n_ibr).sum();
        let n_load: usize = parts.iter().map(|p| p.n_load).sum();
        let mut maps = Vec::with_capacity(parts.len());
        let (mut next_ibr, mut next_load) = (0, n_ibr);
        for p in parts {
            let mut map = Vec::with_capacity(p.n_nodes());
            for i in 0..p.n_nodes() {
                if i < p.n_ibr {
                    map.push(next_ibr);
                    next_ibr += 1;
                } else {
                    map.push(next_load);
                    next_load += 1;
                }
            }
            maps.push(map);
        }
        let n = n_ibr + n_load;
        let mut names = vec![String::new(); n];
        let mut g = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut branches = Vec::new();
        for (p, map) in parts.iter().zip(&maps) {
            for i in 0..p.n_nodes() {
                names[map[i]] = p.names[i].clone();
                g[map[i]] = p.g_self[i];
                v[map[i]] = p.v_star[i];
            }
            branches.extend(p.branches.iter().map(|b| Branch {
                from: map[b.from],
                to: map[b.to],
                ..b.clone()
            }));
        }
        let net = NetworkSpec::new(n_ibr, n_load, branches, g, v, Some(names))?;
        Ok((net, maps))
    }

    /// Connected components (branches with zero admittance are ignored).
    pub fn islands(&self) -> Vec<Vec<usize>> {
        let n = self.n_nodes();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for b in &self.branches {
            if b.y > 0.0 {
                let (ra, rb) = (find(&mut parent, b.from), find(&mut parent, b.to));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_of_group: Vec<usize> = Vec::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            match root_of_group.iter().position(|&g| g == r) {
                Some(k) => groups[k].push(i),
                None => {
                    root_of_group.push(r);
                    groups.push(vec![i]);
                }
            }
        }
        groups
    }
}

/// Mapping of each side's local node indices into a merged network.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMap {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Tie-line description between node `from` of the first grid and node
/// `to` of the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieLine {
    pub from: usize,
    pub to: usize,
    pub y: f64,
    pub theta: f64,
    #[serde(default)]
    pub conductance: f64,
}

/// Networks two grids through a tie line.
pub fn close_tie_line(
    first: &NetworkSpec,
    second: &NetworkSpec,
    tie: &TieLine,
) -> Result<(NetworkSpec, NodeMap)> {
    if tie.from >= first.n_nodes() || tie.to >= second.n_nodes() {
        return Err(Error::InvalidParameter(format!(
            "tie endpoints ({}, {}) out of range",
            tie.from, tie.to
        )));
    }
    let (union, mut maps) = NetworkSpec::union(&[first, second])?;
    let second_map = maps.pop().expect("two parts");
    let first_map = maps.pop().expect("two parts");
    let merged = union.with_branch(
        Branch {
            from: first_map[tie.from],
            to: second_map[tie.to],
            y: tie.y,
            theta: tie.theta,
        },
        tie.conductance,
    )?;
    Ok((
        merged,
        NodeMap {
            first: first_map,
            second: second_map,
        },
    ))
}

/// Nominal angles and net injections satisfying the network constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub delta_star: Vector,
    pub p_i_star: Vector,
}

impl OperatingPoint {
    /// Largest constraint violation `|P_I* - P_I(δ*)|`.
    pub fn residual(&self, network: &NetworkSpec) -> Result<f64> {
        let p = nonlinear_injection(network, &self.delta_star)?;
        Ok((p - &self.p_i_star).amax())
    }
}

/// Net real injection at every node for the angle vector `delta`.
pub fn nonlinear_injection(network: &NetworkSpec, delta: &Vector) -> Result<Vector> {
    let n = network.n_nodes();
    if delta.len() != n {
        return Err(Error::dim("nonlinear_injection delta", n, delta.len()));
    }
    let v = &network.v_star;
    Ok(Vector::from_fn(n, |i, _| {
        let mut p = v[i] * v[i] * network.g_self[i];
        for k in 0..n {
            if k != i && network.y_mag[(i, k)] != 0.0 {
                p += v[i]
                    * v[k]
                    * network.y_mag[(i, k)]
                    * (delta[i] - delta[k] - network.theta[(i, k)]).cos();
            }
        }
        p
    }))
}

fn sensitivity(network: &NetworkSpec, delta: &Vector) -> Mat {
    let n = network.n_nodes();
    let v = &network.v_star;
    let mut h = Mat::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for k in 0..n {
            if k == i || network.y_mag[(i, k)] == 0.0 {
                continue;
            }
            let hik = v[i]
                * v[k]
                * network.y_mag[(i, k)]
                * (delta[i] - delta[k] - network.theta[(i, k)]).sin();
            h[(i, k)] = hik;
            diag -= hik;
        }
        h[(i, i)] = diag;
    }
    h
}

/// Splits the total load of each island across its inverters in proportion
/// to their droop stiffness `1/m_P`. Returns the injection schedule for all
/// nodes (loads negative).
pub fn droop_dispatch(network: &NetworkSpec, m_p: &[f64], load_power: &[f64]) -> Result<Vector> {
    if m_p.len() != network.n_ibr {
        return Err(Error::dim("droop_dispatch m_p", network.n_ibr, m_p.len()));
    }
    if load_power.len() != network.n_load {
        return Err(Error::dim(
            "droop_dispatch load_power",
            network.n_load,
            load_power.len(),
        ));
    }
    let n = network.n_nodes();
    let mut inj = Vector::zeros(n);
    for i in 0..network.n_load {
        inj[network.n_ibr + i] = -load_power[i];
    }
    for island in network.islands() {
        let demand: f64 = island
            .iter()
            .filter(|&&i| i >= network.n_ibr)
            .map(|&i| -inj[i])
            .sum::<f64>()
            + island
                .iter()
                .map(|&i| network.v_star[i].powi(2) * network.g_self[i])
                .sum::<f64>();
        let stiffness: f64 = island
            .iter()
            .filter(|&&i| i < network.n_ibr)
            .map(|&i| 1.0 / m_p[i])
            .sum();
        if stiffness == 0.0 {
            if demand != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "island containing node '{}' has load but no inverter",
                    network.names[island[0]]
                )));
            }
            continue;
        }
        for &i in island.iter().filter(|&&i| i < network.n_ibr) {
            inj[i] = demand * (1.0 / m_p[i]) / stiffness;
        }
    }
    Ok(inj)
}

/// Newton–Raphson solution of the real-power constraints. The first
/// inverter node of every island is its angle reference and absorbs the
/// mismatch (losses); every other node is held at its scheduled injection.
pub fn solve_operating_point(
    network: &NetworkSpec,
    schedule: &Vector,
    initial: Option<&Vector>,
) -> Result<OperatingPoint> {
    let n = network.n_nodes();
    if schedule.len() != n {
        return Err(Error::dim("solve_operating_point schedule", n, schedule.len()));
    }
    let mut delta = match initial {
        Some(d) if d.len() != n => return Err(Error::dim("solve_operating_point initial", n, d.len())),
        Some(d) => d.clone(),
        None => Vector::zeros(n),
    };
    let mut free = Vec::new();
    for island in network.islands() {
        let slack = island.iter().copied().find(|&i| i < network.n_ibr);
        free.extend(island.into_iter().filter(|&i| Some(i) != slack));
    }
    free.sort_unstable();
    let scale = schedule.amax().max(1.0);
    let mut mismatch = f64::INFINITY;
    for _ in 0..=OPERATING_POINT_MAX_ITER {
        let p = nonlinear_injection(network, &delta)?;
        let f = Vector::from_iterator(free.len(), free.iter().map(|&i| p[i] - schedule[i]));
        mismatch = f.amax();
        if mismatch <= OPERATING_POINT_TOL * scale {
            return Ok(OperatingPoint {
                delta_star: delta,
                p_i_star: p,
            });
        }
        let h = sensitivity(network, &delta);
        let jac = Mat::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
        let step = jac.lu().solve(&(-f)).ok_or(Error::OperatingPoint {
            iterations: 0,
            mismatch,
        })?;
        for (k, &i) in free.iter().enumerate() {
            delta[i] += step[k];
        }
    }
    Err(Error::OperatingPoint {
        iterations: OPERATING_POINT_MAX_ITER,
        mismatch,
    })
}

/// Linear sensitivity `ΔP_I = H Δδ` around an operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    pub h: Mat,
    n_ibr: usize,
}

impl HMatrix {
    pub fn new(h: Mat, n_ibr: usize) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::dim("HMatrix square", h.nrows(), h.ncols()));
        }
        if n_ibr > h.nrows() {
            return Err(Error::dim("HMatrix n_ibr", h.nrows(), n_ibr));
        }
        Ok(Self { h, n_ibr })
    }

    pub fn n_ibr(&self) -> usize {
        self.n_ibr
    }

    pub fn n_load(&self) -> usize {
        self.h.nrows() - self.n_ibr
    }

    pub fn hgg(&self) -> Mat {
        self.h.view((0, 0), (self.n_ibr, self.n_ibr)).into_owned()
    }

    pub fn hgl(&self) -> Mat {
        self.h
            .view((0, self.n_ibr), (self.n_ibr, self.n_load()))
            .into_owned()
    }

    pub fn hlg(&self) -> Mat {
        self.h
            .view((self.n_ibr, 0), (self.n_load(), self.n_ibr))
            .into_owned()
    }

    pub fn hll(&self) -> Mat {
        self.h
            .view((self.n_ibr, self.n_ibr), (self.n_load(), self.n_load()))
            .into_owned()
    }
}

pub fn build_h_matrix(network: &NetworkSpec, op: &OperatingPoint) -> Result<HMatrix> {
    let n = network.n_nodes();
    if op.delta_star.len() != n {
        return Err(Error::dim("build_h_matrix delta_star", n, op.delta_star.len()));
    }
    HMatrix::new(sensitivity(network, &op.delta_star), network.n_ibr)
}

/// Result of eliminating the load nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct KronReduction {
    /// `H_GG − H_GL H_LL⁻¹ H_LG`
    pub h_red: Mat,
    /// `H_GL H_LL⁻¹`
    pub f_map: Mat,
    /// 2-norm condition number of `H_LL` (1 when there are no load nodes).
    pub condition: f64,
}

pub fn kron_reduce(h: &HMatrix) -> Result<KronReduction> {
    let (n, m) = (h.n_ibr(), h.n_load());
    if m == 0 {
        return Ok(KronReduction {
            h_red: h.hgg(),
            f_map: Mat::zeros(n, 0),
            condition: 1.0,
        });
    }
    let hll = h.hll();
    let (smin, smax) = singular_value_range(&hll);
    if !(smin > smax * 1e-13) {
        return Err(Error::ReductionFailure {
            smallest_singular_value: smin,
        });
    }
    let condition = smax / smin;
    log::debug!("Kron reduction: cond(H_LL) = {condition:.3e}");
    let lu = hll.lu();
    // H_GL H_LL⁻¹ = (H_LL⁻ᵀ H_GLᵀ)ᵀ
    let hll_t = h.hll().transpose();
    let f_map = hll_t
        .lu()
        .solve(&h.hgl().transpose())
        .ok_or(Error::ReductionFailure {
            smallest_singular_value: smin,
        })?
        .transpose();
    let x = lu.solve(&h.hlg()).ok_or(Error::ReductionFailure {
        smallest_singular_value: smin,
    })?;
    let h_red = h.hgg() - h.hgl() * x;
    Ok(KronReduction {
        h_red,
        f_map,
        condition,
    })
}

/// Continuous linear plant of one or more networked microgrids.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub f: Mat,
    pub e: Mat,
    pub h_red: Mat,
    pub f_map: Mat,
}

impl LinearPlant {
    pub fn n_ibr(&self) -> usize {
        self.b1.ncols()
    }

    pub fn n_load(&self) -> usize {
        self.f.ncols()
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// Per-IBR diagonal block of `A_G` (the network-free dynamics).
    pub fn ibr_block(ibr: &IbrParams) -> Mat {
        Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -ibr.omega_c])
    }

    /// Output map `ΔP_G = h_red E x` (load term excluded).
    pub fn power_output_matrix(&self) -> Mat {
        &self.h_red * &self.e
    }
}

pub fn assemble_plant(ibrs: &[IbrParams], h: &HMatrix) -> Result<LinearPlant> {
    let n = ibrs.len();
    if h.n_ibr() != n {
        return Err(Error::dim("assemble_plant ibr count", h.n_ibr(), n));
    }
    let red = kron_reduce(h)?;
    let a_g = block_diag(&ibrs.iter().map(LinearPlant::ibr_block).collect::<Vec<_>>());
    let b1 = block_diag(
        &ibrs
            .iter()
            .map(|p| Mat::from_column_slice(2, 1, &[0.0, p.omega_c]))
            .collect::<Vec<_>>(),
    );
    let b2 = block_diag(
        &ibrs
            .iter()
            .map(|p| Mat::from_column_slice(2, 1, &[0.0, -p.m_p * p.omega_c]))
            .collect::<Vec<_>>(),
    );
    let e = block_diag(&vec![Mat::from_row_slice(1, 2, &[1.0, 0.0]); n]);
    let a = &a_g + &b2 * &red.h_red * &e;
    let f = &b2 * &red.f_map;
    Ok(LinearPlant {
        a,
        b1,
        b2,
        f,
        e,
        h_red: red.h_red,
        f_map: red.f_map,
    })
}

/// Largest entry magnitude of H, used to scale linearization tolerances.
pub fn h_scale(h: &HMatrix) -> f64 {
    max_abs(&h.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_node() -> NetworkSpec {
        NetworkSpec::new(
            1,
            1,
            vec![Branch::reactive(0, 1, 1.0)],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            None,
        )
        .unwrap()
    }

    #[test]
    fn ibr_setpoint_invariant() {
        let p = IbrParams::new(10.0, 1e-3, 314.0, 200.0).unwrap();
        assert_eq!(p.omega_s_star, 314.0 + 1e-3 * 200.0);
        assert!(IbrParams::new(0.0, 1e-3, 314.0, 0.0).is_err());
        assert!(IbrParams::new(10.0, -1.0, 314.0, 0.0).is_err());
    }

    #[test]
    fn injection_flat_start_is_zero() {
        let p = nonlinear_injection(&two_node(), &Vector::zeros(2)).unwrap();
        assert!(p.amax() < 1e-15);
    }

    #[test]
    fn injection_small_angle() {
        let p = nonlinear_injection(&two_node(), &Vector::from_vec(vec![0.1, 0.0])).unwrap();
        // cos(0.1 - π/2) = sin(0.1)
        assert_relative_eq!(p[0], 0.1f64.sin(), epsilon = 1e-15);
        assert_relative_eq!(p[1], -(0.1f64.sin()), epsilon = 1e-15);
        assert_relative_eq!(p[0], 0.09983, epsilon = 1e-5);
    }

    #[test]
    fn injection_dimension_error() {
        assert!(matches!(
            nonlinear_injection(&two_node(), &Vector::zeros(3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn h_two_node() {
        let op = OperatingPoint {
            delta_star: Vector::zeros(2),
            p_i_star: Vector::zeros(2),
        };
        let h = build_h_matrix(&two_node(), &op).unwrap();
        assert_relative_eq!(h.h, Mat::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn kron_hand_elimination() {
        let h = HMatrix::new(Mat::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]), 1).unwrap();
        let red = kron_reduce(&h).unwrap();
        assert_relative_eq!(red.h_red[(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(red.f_map[(0, 0)], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn kron_block_diagonal() {
        let mut m = Mat::zeros(4, 4);
        m[(0, 0)] = 3.0;
        m[(0, 1)] = -1.0;
        m[(1, 0)] = -1.0;
        m[(1, 1)] = 2.0;
        m[(2, 2)] = 5.0;
        m[(3, 3)] = 7.0;
        let h = HMatrix::new(m, 2).unwrap();
        let red = kron_reduce(&h).unwrap();
        assert_eq!(red.h_red, h.hgg());
        assert_eq!(red.f_map, Mat::zeros(2, 2));
    }

    #[test]
    fn kron_singular_reports_failure() {
        let h = HMatrix::new(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), 1).unwrap();
        match kron_reduce(&h) {
            Err(Error::ReductionFailure {
                smallest_singular_value,
            }) => assert_eq!(smallest_singular_value, 0.0),
            other => panic!("expected reduction failure, got {other:?}"),
        }
    }

    #[test]
    fn isolated_ibr_block() {
        let p = IbrParams::new(10.0, 1e-3, 314.0, 0.0).unwrap();
        let h = HMatrix::new(Mat::zeros(1, 1), 1).unwrap();
        let plant = assemble_plant(&[p], &h).unwrap();
        assert_eq!(plant.a, Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -10.0]));
        assert_eq!(plant.b1, Mat::from_column_slice(2, 1, &[0.0, 10.0]));
        assert_eq!(plant.b2, Mat::from_column_slice(2, 1, &[0.0, -1e-2]));
    }

    #[test]
    fn impedance_branch_angle() {
        let (b, g) = Branch::from_impedance(0, 1, 0.0, 0.5).unwrap();
        assert_relative_eq!(b.y, 2.0, epsilon = 1e-14);
        assert_relative_eq!(b.theta, PI / 2.0, epsilon = 1e-14);
        assert_eq!(g, 0.0);
        let (b, g) = Branch::from_impedance(0, 1, 1.0, 1.0).unwrap();
        assert_relative_eq!(g, 0.5, epsilon = 1e-14);
        assert_relative_eq!(b.theta, 0.75 * PI, epsilon = 1e-14);
    }

    #[test]
    fn operating_point_two_node() {
        let net = two_node();
        let sched = Vector::from_vec(vec![0.0, -0.5]);
        let op = solve_operating_point(&net, &sched, None).unwrap();
        // sin(δ₂ − δ₁) = −0.5 with δ₁ = 0
        assert_relative_eq!(op.delta_star[1], (-0.5f64).asin(), epsilon = 1e-10);
        assert_relative_eq!(op.p_i_star[0], 0.5, epsilon = 1e-9);
        assert!(op.residual(&net).unwrap() < 1e-12);
    }

    #[test]
    fn islands_and_union() {
        let (u, maps) = NetworkSpec::union(&[&two_node(), &two_node()]).unwrap();
        assert_eq!(u.n_ibr(), 2);
        assert_eq!(maps, vec![vec![0, 2], vec![1, 3]]);
        let mut islands = u.islands();
        islands.sort();
        assert_eq!(islands, vec![vec![0, 2], vec![1, 3]]);
    }
}
