use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::BlockConfig;
use crate::layers::{
    cem_attention, cem_mlp, reference_gated_mlp, reference_mha, CemAttentionParams, CemMlpParams, GatedMlpParams,
    ParamGroup, ParamStore, ReferenceMhaParams,
};
use crate::par::{self, Exec};
use crate::tensor::{Tape, Tensor};

use super::VerifyError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    Attention,
    Mlp,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub configs: usize,
    pub base_seed: u64,
    pub tolerance: f64,
    pub exec: Exec,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            configs: 100,
            base_seed: 0,
            tolerance: 1e-10,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub component: Component,
    /// Reference built with a fresh, untied value (or down) matrix.
    pub untied_control: bool,
    pub configs: usize,
    pub tolerance: f64,
    pub worst_deviation: f64,
    /// Seed that reproduces the worst case.
    pub worst_seed: u64,
    pub passed: bool,
}

/// Unit step, one iteration, identity preconditioner, zero diagonal, no
/// positional bias and no inner norm.
fn equivalence_block(r: &mut ChaCha8Rng) -> BlockConfig {
    let heads = [1, 2, 4][r.gen_range(0..3)];
    let d = [8, 16][r.gen_range(0..2)];
    BlockConfig {
        d_model: d,
        heads,
        head_dim: d / heads,
        d_ff: r.gen_range(1..=40),
        inner_norm: false,
        ..BlockConfig::default()
    }
}

/// Worst absolute deviation between the tied layer minus its residual and
/// the reference layer, for the instance generated from `seed`.
pub fn equivalence_deviation(component: Component, seed: u64, untied: bool) -> Result<f64, VerifyError> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let cfg = equivalence_block(&mut r);
    let len = r.gen_range(1..=16);
    let h = Tensor::randn(&[len, cfg.d_model], 1.0, &mut r);
    let mut store = ParamStore::new();
    let tape = Tape::new();
    match component {
        Component::Attention => {
            let cem = CemAttentionParams::init(&mut store, "attn", &cfg, &mut r);
            let mut reference = ReferenceMhaParams::tied_to(&cem);
            if untied {
                for (k, head) in reference.heads.iter_mut().enumerate() {
                    head.w_v = store.add_randn(
                        format!("untied.h{k}.w_v"),
                        &[cfg.head_dim, cfg.d_model],
                        0.5,
                        ParamGroup::Attention,
                        &mut r,
                    );
                }
            }
            let b = store.bind_frozen(&tape);
            let hv = tape.constant(h.clone());
            let lhs = cem_attention(&b, &cem, hv, hv, None)?.value().sub(&h)?;
            let rhs = reference_mha(&b, &reference, hv)?.value();
            Ok(lhs.max_abs_diff(&rhs)?)
        }
        Component::Mlp => {
            let cem = CemMlpParams::init(&mut store, "mlp", &cfg, &mut r);
            let mut reference = GatedMlpParams::tied_to(&cem);
            if untied {
                reference.w_down_t =
                    store.add_randn("untied.w_down_t", &[cfg.d_ff, cfg.d_model], 0.5, ParamGroup::Mlp, &mut r);
            }
            let b = store.bind_frozen(&tape);
            let hv = tape.constant(h.clone());
            let lhs = cem_mlp(&b, &cem, hv, hv, None)?.value().sub(&h)?;
            let rhs = reference_gated_mlp(&b, &reference, hv)?.value();
            Ok(lhs.max_abs_diff(&rhs)?)
        }
    }
}

/// Sweeps `opts.configs` random instances. With `untied`, passing means
/// the deviation exceeded the tolerance everywhere (the control was caught).
pub fn tied_equivalence_check(
    component: Component,
    opts: &SweepOptions,
    untied: bool,
) -> Result<EquivalenceReport, VerifyError> {
    let devs = par::map_range(opts.exec, opts.configs, |i| {
        let seed = opts.base_seed + i as u64;
        equivalence_deviation(component, seed, untied).map(|d| (seed, d))
    });
    let devs = devs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let pick = if untied {
        devs.iter().copied().fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    } else {
        devs.iter().copied().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a })
    };
    let passed = if untied {
        pick.1 > opts.tolerance
    } else {
        pick.1 <= opts.tolerance
    };
    Ok(EquivalenceReport {
        component,
        untied_control: untied,
        configs: opts.configs,
        tolerance: opts.tolerance,
        worst_deviation: pick.1,
        worst_seed: pick.0,
        passed,
    })
}
