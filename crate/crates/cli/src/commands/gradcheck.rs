//! Finite-difference check of one decoder block at 64-bit precision.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use avfuse::model::{decoder_block, AdaAVATrace, Encoded, FusionMode, ModelConfig, ParamStore};
use avfuse::numerics::{gradcheck_coords, Graph, Var};
use avfuse::rng::substream;
use avfuse::{Real, Tensor};
use clap::Args;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{runtime, CliResult};

/// Finite-difference step.
pub const STEP: Real = 1e-5;

#[derive(Args, Clone, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "adaava_audio")]
    pub mode: FusionMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model width; the other dimensions follow the default model.
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 0.13)]
    pub beta: f64,
    /// Coordinates sampled from each parameter tensor.
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    /// Evaluation points with a confidence this close to beta are redrawn.
    #[arg(long, default_value_t = 1e-3)]
    pub band: f64,
    /// Keep coordinates whose probes flip a fusion mask.
    #[arg(long)]
    pub no_exclusion: bool,
    /// Place one confidence a hair above beta.
    #[arg(long)]
    pub near_threshold: bool,
    /// Failure threshold on any group's maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        GradcheckArgs {
            mode: FusionMode::AdaavaAudio,
            seed: 0,
            d: 128,
            heads: 4,
            beta: 0.13,
            samples: 16,
            band: 1e-3,
            no_exclusion: false,
            near_threshold: false,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub max_rel_error: Real,
    pub worst: Option<String>,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct GradcheckSummary {
    pub mode: FusionMode,
    pub groups: BTreeMap<String, GroupResult>,
    /// Evaluation points drawn before one cleared the band.
    pub draws: usize,
    /// Smallest `|A_conf − β|` at the evaluation point, for gated modes.
    pub margin: Option<Real>,
    pub tolerance: Real,
}

impl GradcheckSummary {
    pub fn max_rel_error(&self) -> Real {
        self.groups.values().map(|g| g.max_rel_error).fold(0.0, Real::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.values().all(|g| g.max_rel_error < self.tolerance)
    }
}

impl fmt::Display for GradcheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "decoder block 0, {}, step {STEP:e}", self.mode)?;
        if let Some(m) = self.margin {
            write!(f, ", closest confidence {m:.2e} from beta after {} draw(s)", self.draws)?;
        }
        for (name, g) in &self.groups {
            write!(
                f,
                "\n  {name:<8} max rel error {:.3e}  checked {:>4}  skipped {:>3}",
                g.max_rel_error, g.checked, g.skipped
            )?;
            if let (Some(w), true) = (&g.worst, g.max_rel_error >= self.tolerance) {
                write!(f, "  worst {w}")?;
            }
        }
        write!(
            f,
            "\n{} (max {:.3e}, tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance
        )
    }
}

/// Sublayer a decoder-block parameter belongs to: `dec.0.cross_a.wq` is in
/// `cross_a`, `dec.0.mlp.fc1.w` in `mlp`.
fn group_of(name: &str) -> String {
    name.split('.').nth(2).unwrap_or(name).to_string()
}

struct Fixture {
    cfg: ModelConfig,
    store: ParamStore,
    x: Tensor,
    a: Tensor,
    v: Tensor,
    weights: Tensor,
}

impl Fixture {
    fn draw(args: &GradcheckArgs, attempt: u64) -> Fixture {
        let cfg = ModelConfig {
            d: args.d,
            heads: args.heads,
            beta: args.beta as Real,
            fusion_mode: args.mode,
            decoder_blocks: 1,
            dropout: 0.0,
            ..Default::default()
        };
        let store = ParamStore::init(&cfg, args.seed);
        let mut rng = substream(args.seed, "gradcheck", attempt);
        let mut t = |rows: usize| Tensor::from_fn(&[rows, args.d], |_| rng.sample::<f64, _>(StandardNormal) as Real);
        let (x, a, v, weights) = (t(6), t(10), t(4), t(6));
        Fixture { cfg, store, x, a, v, weights }
    }

    fn objective(&self, g: &mut Graph, name: &str, probe: Var, trace: Option<&mut Vec<AdaAVATrace>>) -> avfuse::Result<Var> {
        let mut p = self.store.bind(g, false);
        p.replace(name, probe)?;
        let enc = Encoded {
            audio: Some(g.constant(self.a.clone())),
            visual: Some(g.constant(self.v.clone())),
        };
        let xv = g.constant(self.x.clone());
        let y = decoder_block(g, &p, &self.cfg, 0, xv, &enc, None, trace)?;
        let y = g.mul_const(y, self.weights.clone())?;
        g.sum(y)
    }

    /// Confidences and masks with `name` set to `value`.
    fn gate(&self, name: &str, value: &Tensor) -> Option<AdaAVATrace> {
        let mut g = Graph::new();
        let probe = g.constant(value.clone());
        let mut sink = Vec::new();
        self.objective(&mut g, name, probe, Some(&mut sink)).ok()?;
        sink.pop()
    }

    fn margin(&self) -> Option<Real> {
        let t = self.gate("dec.0.ln1.g", self.store.get("dec.0.ln1.g").ok()?)?;
        let beta = self.cfg.beta;
        Some(t.a_conf.data().iter().map(|c| (c - beta).abs()).fold(Real::INFINITY, Real::min))
    }

    /// Shift one confidence bias so the first confidence sits just above beta.
    fn push_near_threshold(&mut self) {
        let Some(t) = self.gate("dec.0.ln1.g", self.store.get("dec.0.ln1.g").unwrap()) else {
            return;
        };
        let c = t.a_conf.at(0, 0);
        let logit = |p: Real| (p / (1.0 - p)).ln();
        let target = self.cfg.beta + 1e-8;
        let b = self.store.get_mut("dec.0.conf.b").expect("gated modes have a confidence layer");
        b.data_mut()[0] += logit(target) - logit(c);
    }
}

pub fn gradcheck(args: &GradcheckArgs, _out: &mut dyn Write) -> CliResult<GradcheckSummary> {
    if !(args.band >= 0.0) || args.samples == 0 {
        return Err(crate::error::invalid("--band must be ≥ 0 and --samples positive"));
    }
    let gated = args.mode.is_adaava();
    let mut draws = 1;
    let mut fx = Fixture::draw(args, 0);
    fx.cfg.validate()?;
    if args.near_threshold {
        if !gated {
            return Err(crate::error::invalid(format!("--near-threshold needs a gated mode, not {}", args.mode)));
        }
        fx.push_near_threshold();
    } else if gated && !args.no_exclusion {
        while fx.margin().is_some_and(|m| m < args.band as Real) {
            if draws == 100 {
                return Err(runtime("no evaluation point clears the exclusion band in 100 draws"));
            }
            fx = Fixture::draw(args, draws as u64);
            draws += 1;
        }
    }
    let margin = if gated { fx.margin() } else { None };

    let names: Vec<String> = fx.store.names().filter(|n| n.starts_with("dec.0.")).cloned().collect();
    let mut groups: BTreeMap<String, GroupResult> = BTreeMap::new();
    let mut rng = substream(args.seed, "gradcheck-coords", 0);
    for name in names {
        let point = fx.store.get(&name)?.clone();
        let mut coords: Vec<usize> = (0..point.numel()).collect();
        if coords.len() > args.samples {
            coords = (0..args.samples).map(|_| rng.random_range(0..point.numel())).collect();
            coords.push(0);
            coords.sort_unstable();
            coords.dedup();
        }
        let base = if gated { fx.gate(&name, &point) } else { None };
        let flips = |i: usize| -> bool {
            let Some(base) = &base else { return false };
            [STEP, -STEP].iter().any(|&h| {
                let mut q = point.clone();
                q.data_mut()[i] += h;
                fx.gate(&name, &q).is_none_or(|t| t.m_a != base.m_a || t.m_v != base.m_v)
            })
        };
        let exclude: &dyn Fn(usize) -> bool = if args.no_exclusion { &|_| false } else { &flips };
        let r = gradcheck_coords(|g, p| fx.objective(g, &name, p, None), &point, STEP, &coords, exclude)?;
        let entry = groups.entry(group_of(&name)).or_insert(GroupResult {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            skipped: 0,
        });
        entry.checked += r.checked;
        entry.skipped += r.skipped;
        if r.checked > 0 && (entry.worst.is_none() || r.max_rel_error > entry.max_rel_error) {
            entry.max_rel_error = r.max_rel_error;
            entry.worst = r.worst_index.map(|i| format!("{name}[{i}]"));
        }
    }
    Ok(GradcheckSummary {
        mode: args.mode,
        groups,
        draws,
        margin,
        tolerance: args.tolerance as Real,
    })
}
