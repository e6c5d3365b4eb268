use nalgebra::{DMatrix, DVector};

use crate::grid_model::Network;

/// Precomputed affine map from (scaling factors, loads) to the normalized
/// line flows of every contingency.
///
/// With the slack bus removed, the angles of case `c` are
/// `B_red_c^-1 u` for the non-slack injections `u`, so the normalized flows
/// are `M_c u` with `M_c = A_c[:, red] B_red_c^-1`. The slack generator sits
/// at the slack bus and therefore never enters `u`. Stacking all cases:
///
/// ```text
/// f = alpha_gain * alpha + base_offset - load_gain * p_d
/// ```
#[derive(Debug, Clone)]
pub struct PenaltyContext {
    /// `M_c` per contingency, `rows_c x (N - 1)`.
    pub monitors: Vec<DMatrix<f64>>,
    /// `(contingency, branch)` of every stacked row.
    pub rows: Vec<(usize, usize)>,
    n_outputs: usize,
    n_buses: usize,
    /// Row-major `rows x n_outputs`.
    alpha_gain: Vec<f64>,
    base_offset: Vec<f64>,
    /// Row-major `rows x n_buses`, MW input.
    load_gain: Vec<f64>,
}

impl PenaltyContext {
    pub fn new(network: &Network) -> Self {
        let case = &network.case;
        let n = case.n_buses();
        let predicted = case.predicted_generators();
        let k = predicted.len();
        let mut monitors = Vec::with_capacity(network.matrices.len());
        let mut rows = Vec::new();
        let mut alpha_gain = Vec::new();
        let mut base_offset = Vec::new();
        let mut load_gain = Vec::new();
        for (c, m) in network.matrices.iter().enumerate() {
            let n_red = m.reduced_buses.len();
            let mut mc = DMatrix::zeros(m.n_rows(), n_red);
            for r in 0..m.n_rows() {
                let a_red = DVector::from_iterator(
                    n_red,
                    m.reduced_buses.iter().map(|&i| m.a[(r, i)]),
                );
                // B_red is symmetric, so row r of M_c is B_red^-1 a_red.
                let row = m.solve_reduced(&a_red);
                mc.set_row(r, &row.transpose());
            }
            for (r, &branch) in m.branches.iter().enumerate() {
                rows.push((c, branch));
                let mut offset = 0.0;
                for &g in &predicted {
                    let gen = &case.generators[g];
                    let (gain, fixed) = match m.reduced_index[gen.bus] {
                        Some(col) => (
                            mc[(r, col)] * (gen.p_max_mw - gen.p_min_mw) / case.base_mva,
                            mc[(r, col)] * gen.p_min_mw / case.base_mva,
                        ),
                        None => (0.0, 0.0),
                    };
                    alpha_gain.push(gain);
                    offset += fixed;
                }
                base_offset.push(offset);
                for i in 0..n {
                    load_gain.push(match m.reduced_index[i] {
                        Some(col) => mc[(r, col)] / case.base_mva,
                        None => 0.0,
                    });
                }
            }
            monitors.push(mc);
        }
        PenaltyContext {
            monitors,
            rows,
            n_outputs: k,
            n_buses: n,
            alpha_gain,
            base_offset,
            load_gain,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Flow contribution of everything except the predicted scaling
    /// factors.
    pub fn load_offset(&self, p_d: &[f64], out: &mut [f64]) {
        assert_eq!(p_d.len(), self.n_buses, "load vector length");
        for (r, row) in self.load_gain.chunks_exact(self.n_buses).enumerate() {
            let mut v = self.base_offset[r];
            for (g, d) in row.iter().zip(p_d) {
                v -= g * d;
            }
            out[r] = v;
        }
    }

    /// Normalized flows for scaling factors `alpha` given a load offset.
    pub fn flows(&self, alpha: &[f64], offset: &[f64], out: &mut [f64]) {
        if self.n_outputs == 0 {
            out.copy_from_slice(offset);
            return;
        }
        for (r, row) in self.alpha_gain.chunks_exact(self.n_outputs).enumerate() {
            let mut v = offset[r];
            for (g, a) in row.iter().zip(alpha) {
                v += g * a;
            }
            out[r] = v;
        }
    }

    /// `d f_r / d alpha`, one row per stacked flow.
    pub fn alpha_gain_row(&self, r: usize) -> &[f64] {
        &self.alpha_gain[r * self.n_outputs..(r + 1) * self.n_outputs]
    }

    /// Mean over all rows of `max(f^2 - 1, 0)`.
    pub fn penalty(&self, flows: &[f64]) -> f64 {
        if flows.is_empty() {
            return 0.0;
        }
        flows.iter().map(|f| (f * f - 1.0).max(0.0)).sum::<f64>() / flows.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generation_from_alpha, slack_by_balance};
    use crate::grid_model::fixtures::{gen, triangle};
    use proptest::prelude::*;

    fn three_gen_network() -> Network {
        let mut case = triangle();
        case.generators.push(gen(2, 5.0, 80.0, [0.03, 18.0, 0.0]));
        Network::new(case).unwrap()
    }

    proptest! {
        #[test]
        fn monitors_match_fresh_solves(u in proptest::collection::vec(-2.0f64..2.0, 2)) {
            let net = three_gen_network();
            let ctx = PenaltyContext::new(&net);
            for (c, m) in net.matrices.iter().enumerate() {
                let b_red = m.b_red.clone();
                let theta_red = b_red.lu().solve(&DVector::from_column_slice(&u)).unwrap();
                let mut theta = vec![0.0; 3];
                for (r, &i) in m.reduced_buses.iter().enumerate() {
                    theta[i] = theta_red[r];
                }
                let direct = m.normalized_flows(&theta);
                let via = &ctx.monitors[c] * DVector::from_column_slice(&u);
                for (a, b) in direct.iter().zip(via.iter()) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn stacked_flows_match_reconstruction(
            alpha in proptest::collection::vec(0.0f64..1.0, 2),
            scale in 0.5f64..1.5,
        ) {
            let net = three_gen_network();
            let case = &net.case;
            let ctx = PenaltyContext::new(&net);
            let p_d: Vec<f64> = case.default_loads_mw().iter().map(|d| d * scale).collect();
            let predicted = case.predicted_generators();
            let mut p_g = vec![0.0; case.n_generators()];
            for (k, &g) in predicted.iter().enumerate() {
                let gn = &case.generators[g];
                p_g[g] = generation_from_alpha(alpha[k], gn.p_min_mw, gn.p_max_mw);
            }
            p_g[case.slack_generator()] = slack_by_balance(case, &p_d, &p_g);
            let theta = net.reconstruct_angles(&p_g, &p_d, 0.0);
            let mut offset = vec![0.0; ctx.n_rows()];
            let mut flows = vec![0.0; ctx.n_rows()];
            ctx.load_offset(&p_d, &mut offset);
            ctx.flows(&alpha, &offset, &mut flows);
            let mut r = 0;
            for (c, m) in net.matrices.iter().enumerate() {
                for f in m.normalized_flows(&theta[c]) {
                    prop_assert!((f - flows[r]).abs() <= 1e-9);
                    r += 1;
                }
            }
            prop_assert_eq!(r, ctx.n_rows());
        }
    }

    #[test]
    fn penalty_arithmetic() {
        let net = three_gen_network();
        let ctx = PenaltyContext::new(&net);
        let mut flows = vec![0.5; ctx.n_rows()];
        assert_eq!(ctx.penalty(&flows), 0.0);
        flows[3] = 1.0;
        assert_eq!(ctx.penalty(&flows), 0.0);
        flows[3] = -1.2;
        let expected = (1.44 - 1.0) / ctx.n_rows() as f64;
        assert!((ctx.penalty(&flows) - expected).abs() < 1e-15);
    }
}
