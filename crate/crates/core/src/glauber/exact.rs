//! Exact master-equation results for small systems by state enumeration.

use nalgebra::DMatrix;

use super::{flip_probability, GlauberError};
use crate::moments::MomentEstimates;
use crate::sk_model::{CouplingMatrix, ModelParams};

pub const MAX_EXACT_SPINS: usize = 12;

#[inline]
fn spin(index: usize, i: usize) -> f64 {
    if index >> i & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

fn fields_of(couplings: &CouplingMatrix, theta: &[f64], index: usize) -> Vec<f64> {
    let n = couplings.dim();
    let j = couplings.as_matrix();
    (0..n).map(|i| theta[i] + (0..n).map(|k| j[(i, k)] * spin(index, k)).sum::<f64>()).collect()
}

fn check(params: &ModelParams, couplings: &CouplingMatrix) -> Result<(), GlauberError> {
    params.validate()?;
    couplings.check_dimension(params)?;
    if params.n_spins > MAX_EXACT_SPINS {
        return Err(GlauberError::TooLargeForEnumeration { n: params.n_spins, max: MAX_EXACT_SPINS });
    }
    Ok(())
}

/// Flip rates `w_i(s)` for every state, laid out `rates[state * n + i]`.
fn flip_rates(params: &ModelParams, couplings: &CouplingMatrix) -> Vec<f64> {
    let n = params.n_spins;
    let beta = params.beta();
    let mut rates = Vec::with_capacity(n << n);
    for state in 0..1usize << n {
        let h = fields_of(couplings, &params.external_field, state);
        rates.extend((0..n).map(|i| flip_probability(beta, spin(state, i) as i8, h[i])));
    }
    rates
}

/// Stationary distribution of the continuous-time master equation, indexed
/// by [`SpinConfiguration::from_index`](super::SpinConfiguration::from_index).
///
/// Solved with the Grassmann-Taksar-Heyman elimination on the dense rate
/// matrix. GTH never subtracts, so the result is accurate to round-off even
/// for strongly skewed distributions. Valid for asymmetric couplings.
pub fn exact_stationary_distribution(
    params: &ModelParams,
    couplings: &CouplingMatrix,
) -> Result<Vec<f64>, GlauberError> {
    check(params, couplings)?;
    let n = params.n_spins;
    let states = 1usize << n;
    let rates = flip_rates(params, couplings);

    // q[a][b] = rate a -> b, row-major.
    let mut q = vec![0.0; states * states];
    for a in 0..states {
        for i in 0..n {
            q[a * states + (a ^ (1 << i))] = rates[a * n + i];
        }
    }

    for k in (1..states).rev() {
        let s: f64 = q[k * states..k * states + k].iter().sum();
        for i in 0..k {
            q[i * states + k] /= s;
        }
        for i in 0..k {
            let qik = q[i * states + k];
            if qik == 0.0 {
                continue;
            }
            let (head, tail) = q.split_at_mut(k * states);
            let row_i = &mut head[i * states..i * states + k];
            let row_k = &tail[..k];
            for (a, &b) in row_i.iter_mut().zip(row_k) {
                *a += qik * b;
            }
        }
    }

    let mut pi = vec![0.0; states];
    pi[0] = 1.0;
    for k in 1..states {
        pi[k] = (0..k).map(|i| pi[i] * q[i * states + k]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Gibbs distribution `exp(beta sum_i theta_i s_i + beta sum_{i<j} J^s_ij s_i s_j)`
/// with `J^s = (J + J^T)/2`. It is the stationary state of the dynamics when
/// the couplings are symmetric.
pub fn boltzmann_distribution(params: &ModelParams, couplings: &CouplingMatrix) -> Result<Vec<f64>, GlauberError> {
    check(params, couplings)?;
    let n = params.n_spins;
    let beta = params.beta();
    let j = couplings.as_matrix();
    let log_weights: Vec<f64> = (0..1usize << n)
        .map(|state| {
            let mut e = 0.0;
            for i in 0..n {
                e += params.external_field[i] * spin(state, i);
                for k in (i + 1)..n {
                    e += 0.5 * (j[(i, k)] + j[(k, i)]) * spin(state, i) * spin(state, k);
                }
            }
            beta * e
        })
        .collect();
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

/// Stationary moments computed exactly from the enumerated distribution.
///
/// The lagged correlation is evaluated for the random-sequential chain used
/// by the sampler, `lag_attempts` single-spin attempts apart. The returned
/// estimate has `sample_count == 0`, which marks it as exact.
pub fn exact_moments(
    params: &ModelParams,
    couplings: &CouplingMatrix,
    lag_attempts: u64,
) -> Result<MomentEstimates, GlauberError> {
    let pi = exact_stationary_distribution(params, couplings)?;
    let n = params.n_spins;
    let states = pi.len();
    let beta = params.beta();
    let rates = flip_rates(params, couplings);

    let mut m = vec![0.0; n];
    let mut pair = DMatrix::zeros(n, n);
    let mut tanh_pair = DMatrix::zeros(n, n);
    for (state, &p) in pi.iter().enumerate() {
        let h = fields_of(couplings, &params.external_field, state);
        for i in 0..n {
            m[i] += p * spin(state, i);
            let t = (beta * h[i]).tanh();
            for k in 0..n {
                pair[(i, k)] += p * spin(state, i) * spin(state, k);
                tanh_pair[(i, k)] += p * t * spin(state, k);
            }
        }
    }

    // Push p(s) s_j forward through the one-attempt kernel `lag` times, then
    // read off <s_i(t) s_j(t - lag)>.
    let inv_n = 1.0 / n as f64;
    let mut lagged = DMatrix::zeros(n, n);
    for jcol in 0..n {
        let mut g: Vec<f64> = (0..states).map(|s| pi[s] * spin(s, jcol)).collect();
        for _ in 0..lag_attempts {
            let mut next = vec![0.0; states];
            for s in 0..states {
                let mut stay = 1.0;
                for i in 0..n {
                    let move_p = inv_n * rates[s * n + i];
                    next[s ^ (1 << i)] += g[s] * move_p;
                    stay -= move_p;
                }
                next[s] += g[s] * stay;
            }
            g = next;
        }
        for i in 0..n {
            lagged[(i, jcol)] = (0..states).map(|s| g[s] * spin(s, i)).sum::<f64>();
        }
    }

    let mm = DMatrix::from_fn(n, n, |i, k| m[i] * m[k]);
    let mut c0 = &pair - &mm;
    for i in 0..n {
        c0[(i, i)] = 1.0 - m[i] * m[i];
    }
    Ok(MomentEstimates {
        m,
        c0,
        c_lag: lagged - &mm,
        d: tanh_pair - &mm,
        lag_delta: lag_attempts as f64 / n as f64,
        sample_count: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sk_model::sample_couplings_seeded;

    #[test]
    fn free_spins_uniform() {
        let params = ModelParams::uniform(2, 1.0, 1.0, 0.0, 0.0, 0).unwrap();
        let pi = exact_stationary_distribution(&params, &CouplingMatrix::zeros(2)).unwrap();
        for p in pi {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_couplings_give_boltzmann() {
        for seed in 0..5 {
            let params = ModelParams::uniform(3, 1.0, 1.0, 0.0, 0.3, seed).unwrap();
            let j = sample_couplings_seeded(&params);
            let pi = exact_stationary_distribution(&params, &j).unwrap();
            let gibbs = boltzmann_distribution(&params, &j).unwrap();
            for (a, b) in pi.iter().zip(&gibbs) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn asymmetric_couplings_normalized() {
        let params = ModelParams::uniform(6, 0.8, 1.0, 1.0, 0.2, 3).unwrap();
        let j = sample_couplings_seeded(&params);
        let pi = exact_stationary_distribution(&params, &j).unwrap();
        assert!(pi.iter().all(|&p| p >= 0.0));
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Not Gibbs: asymmetric couplings break detailed balance.
        let gibbs = boltzmann_distribution(&params, &j).unwrap();
        let gap = pi.iter().zip(&gibbs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap > 1e-4);
    }

    #[test]
    fn stationary_vector_is_null_space() {
        let params = ModelParams::uniform(5, 1.2, 1.0, 1.0, 0.1, 8).unwrap();
        let j = sample_couplings_seeded(&params);
        let pi = exact_stationary_distribution(&params, &j).unwrap();
        let rates = flip_rates(&params, &j);
        let n = 5;
        let mut flow = vec![0.0; pi.len()];
        for s in 0..pi.len() {
            for i in 0..n {
                let r = rates[s * n + i] * pi[s];
                flow[s ^ (1 << i)] += r;
                flow[s] -= r;
            }
        }
        assert!(flow.iter().all(|f| f.abs() < 1e-14));
    }

    #[test]
    fn rejects_large_systems() {
        let params = ModelParams::uniform(13, 1.0, 1.0, 0.0, 0.0, 0).unwrap();
        assert!(matches!(
            exact_stationary_distribution(&params, &CouplingMatrix::zeros(13)),
            Err(GlauberError::TooLargeForEnumeration { .. })
        ));
    }

    #[test]
    fn exact_lag_one_attempt_matches_tanh_identity() {
        // For one attempt of random-sequential updating,
        // (C_lag - C0) * N + C0 equals <tanh(beta H_i) s_j> - m_i m_j exactly.
        let params = ModelParams::uniform(4, 1.5, 1.0, 1.0, 0.3, 5).unwrap();
        let j = sample_couplings_seeded(&params);
        let mo = exact_moments(&params, &j, 1).unwrap();
        let fd = crate::moments::estimate_d_fd(&mo).unwrap();
        assert!((fd - &mo.d).amax() < 1e-12);
    }
}
