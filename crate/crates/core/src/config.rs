//! TOML run configuration. The schema is documented in `docs/config.md`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumOptions;
use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::kinetic::{ChapmanEnskogOptions, KineticOptions};
use crate::model::{ModelSpec, PairPotential, TrigSeries};
use crate::particles::{FluctuationOptions, TransportOptions};
use crate::problem::Problem;
use crate::report::SCHEMA_VERSION;

mod opt_float_token {
    use crate::report::float_token;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "float_token")] f64);

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        x.map(W).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// free_abp, von_mises or active_2d.
    pub preset: String,
    /// Spatial dimension (1 or 2).
    pub n: usize,
    pub coupling: Option<f64>,
    pub epsilon: f64,
    #[serde(with = "crate::report::float_token")]
    pub radius: f64,
    pub tilt: f64,
    pub potential: Option<TrigSeries>,
    pub gamma: Option<TrigSeries>,
    pub velocity: Option<Vec<TrigSeries>>,
    pub pair: Option<PairPotential>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            preset: "free_abp".into(),
            n: 1,
            coupling: None,
            epsilon: 0.1,
            radius: f64::INFINITY,
            tilt: 0.0,
            potential: None,
            gamma: None,
            velocity: None,
            pair: None,
        }
    }
}

impl ModelConfig {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        if !(1..=2).contains(&self.n) {
            return Err(Error::config("model.n", "spatial dimension must be 1 or 2"));
        }
        let default_coupling = if self.preset == "active_2d" { 0.2 } else { 1.0 };
        let mut spec = ModelSpec::builtin(&self.preset, self.n, self.coupling.unwrap_or(default_coupling))?;
        if let Some(u) = &self.potential {
            spec.potential = u.clone();
        }
        if let Some(g) = &self.gamma {
            spec.gamma = g.clone();
        }
        if let Some(v) = &self.velocity {
            if v.len() != self.n {
                return Err(Error::config("model.velocity", format!("expected {} components, got {}", self.n, v.len())));
            }
            spec.velocity = v.clone();
        }
        if let Some(w) = &self.pair {
            spec.pair = w.clone();
        }
        spec.tilt = self.tilt;
        spec.epsilon = self.epsilon;
        spec.radius = self.radius;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("model.epsilon", "must be finite and >= 0"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::config("model.radius", "must be positive (inf for mean-field)"));
        }
        if !self.tilt.is_finite() {
            return Err(Error::config("model.tilt", "must be finite"));
        }
        let k = 1024;
        if let Some(j) = (0..k).find(|&j| !(spec.gamma.eval(-PI + 2.0 * PI * j as f64 / k as f64) > 0.0)) {
            let t = -PI + 2.0 * PI * j as f64 / k as f64;
            return Err(Error::config("model.gamma", format!("mobility must be positive, Γ({t:.4}) = {:e}", spec.gamma.eval(t))));
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Angular nodes (even, >= 16).
    pub m: usize,
    /// Spatial nodes per axis.
    pub nodes: usize,
    /// Box length per axis.
    pub length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { m: 128, nodes: 64, length: 2.0 * PI }
    }
}

/// ρ(q) = 1 + amplitude·cos(2π·mode·q₁/L).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub amplitude: f64,
    pub mode: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { amplitude: 0.5, mode: 1 }
    }
}

impl ProfileConfig {
    pub fn sample(&self, space: &SpatialGrid) -> Vec<f64> {
        let k = 2.0 * PI * self.mode as f64 / space.extents()[0];
        space.sample(|x| 1.0 + self.amplitude * (k * x[0]).cos())
    }

    fn validate(&self, key: &str) -> Result<()> {
        if !(self.amplitude.abs() < 1.0) {
            return Err(Error::config(format!("{key}.amplitude"), "|amplitude| must be < 1 to keep the density positive"));
        }
        Ok(())
    }
}

/// Decay of the cosine profile in diffusive time: a number, or "diffusion" for the exact
/// solution of the limiting diffusion equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Decay {
    Rate(f64),
    Named(DecayName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayName {
    Diffusion,
}

/// Local-equilibrium path ρ(q,t)G(θ) with ρ = 1 + a·cos(2π·mode·q₁/L)·e^{-decay·t}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub t_final: f64,
    pub slices: usize,
    pub amplitude: f64,
    pub mode: usize,
    pub decay: Decay,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig { t_final: 1.0, slices: 41, amplitude: 0.5, mode: 1, decay: Decay::Rate(2.0) }
    }
}

impl PathConfig {
    fn validate(&self, key: &str) -> Result<()> {
        if !(self.t_final > 0.0) {
            return Err(Error::config(format!("{key}.t_final"), "must be positive"));
        }
        if self.slices < 3 {
            return Err(Error::config(format!("{key}.slices"), "need at least 3 time slices"));
        }
        if !(self.amplitude.abs() < 1.0) {
            return Err(Error::config(format!("{key}.amplitude"), "|amplitude| must be < 1"));
        }
        if let Decay::Rate(r) = self.decay {
            if !r.is_finite() {
                return Err(Error::config(format!("{key}.decay"), "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RateConfig {
    /// Defaults to model.epsilon.
    pub epsilon: Option<f64>,
    pub path: PathConfig,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ladder: Vec<f64>,
    pub path: PathConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { ladder: vec![0.2, 0.1, 0.05, 0.025], path: PathConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoeffsConfig {
    /// Random admissible ξ tried in the Schur check.
    pub schur_trials: usize,
    pub seed: u64,
}

impl Default for CoeffsConfig {
    fn default() -> Self {
        CoeffsConfig { schur_trials: 32, seed: 3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct KineticConfig {
    /// Defaults to model.epsilon.
    pub epsilon: Option<f64>,
    pub initial: ProfileConfig,
    pub run: KineticOptions,
    /// When present, the Chapman-Enskog ladder is run as well.
    pub chapman_enskog: Option<ChapmanEnskogOptions>,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticlesConfig {
    #[serde(rename = "N")]
    pub n: usize,
    /// Overrides model.radius.
    #[serde(rename = "R", with = "opt_float_token")]
    pub radius: Option<f64>,
    /// Overrides model.epsilon.
    pub epsilon: Option<f64>,
    pub dt: f64,
    /// Length of the recorded run in original time.
    #[serde(rename = "T")]
    pub t_final: f64,
    pub burn_in: f64,
    pub fit_start: f64,
    pub sample_every: f64,
    pub bootstrap: usize,
    pub seed: u64,
    /// Box extents; empty means the unit box.
    #[serde(rename = "box")]
    pub extents: Vec<f64>,
    /// Bins of the angular histogram.
    #[serde(rename = "M_hist")]
    pub m_hist: usize,
    pub tolerance: f64,
}

impl Default for ParticlesConfig {
    fn default() -> Self {
        let t = TransportOptions::default();
        ParticlesConfig {
            n: t.n,
            radius: None,
            epsilon: None,
            dt: t.dt,
            t_final: t.t_final,
            burn_in: t.burn_in,
            fit_start: t.fit_start,
            sample_every: t.sample_every,
            bootstrap: t.bootstrap,
            seed: t.seed,
            extents: t.extents,
            m_hist: 64,
            tolerance: t.tolerance,
        }
    }
}

impl ParticlesConfig {
    pub fn transport_options(&self) -> TransportOptions {
        TransportOptions {
            n: self.n,
            dt: self.dt,
            burn_in: self.burn_in,
            t_final: self.t_final,
            fit_start: self.fit_start,
            sample_every: self.sample_every,
            bootstrap: self.bootstrap,
            seed: self.seed,
            extents: self.extents.clone(),
            tolerance: self.tolerance,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("particles.N", "need at least 2 particles"));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return Err(Error::config("particles.R", "must be positive (inf for mean-field)"));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::config("particles.epsilon", "must be finite and >= 0"));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("particles.dt", "must be positive"));
        }
        if !(self.t_final > self.fit_start && self.fit_start >= 0.0) {
            return Err(Error::config("particles.T", "must exceed fit_start >= 0"));
        }
        if !(self.burn_in >= 0.0) {
            return Err(Error::config("particles.burn_in", "must be >= 0"));
        }
        if !(self.sample_every > 0.0) {
            return Err(Error::config("particles.sample_every", "must be positive"));
        }
        if !self.extents.is_empty() && (self.extents.len() != dim || self.extents.iter().any(|l| !(*l > 0.0 && l.is_finite()))) {
            return Err(Error::config("particles.box", format!("need {dim} positive extents")));
        }
        if self.m_hist < 2 {
            return Err(Error::config("particles.M_hist", "need at least 2 bins"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub equilibrium: EquilibriumOptions,
    pub coeffs: CoeffsConfig,
    pub rate: RateConfig,
    pub gamma_sweep: SweepConfig,
    pub kinetic: KineticConfig,
    pub particles: ParticlesConfig,
    pub fluctuations: FluctuationOptions,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::default(),
            grid: GridConfig::default(),
            equilibrium: EquilibriumOptions::default(),
            coeffs: CoeffsConfig::default(),
            rate: RateConfig::default(),
            gamma_sweep: SweepConfig::default(),
            kinetic: KineticConfig::default(),
            particles: ParticlesConfig::default(),
            fluctuations: FluctuationOptions::default(),
            output: OutputConfig::default(),
        }
    }
}

fn check_ladder(key: &str, ladder: &[f64]) -> Result<()> {
    if ladder.is_empty() || ladder.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::config(key, "need at least one positive epsilon"));
    }
    Ok(())
}

impl RunConfig {
    /// Parses TOML; type and unknown-key errors name the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(text).map_err(|e| Error::config("<toml>", e.message().trim()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            Error::config(key, e.into_inner().message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        let spec = self.model.to_spec()?;
        let g = &self.grid;
        if g.m < 16 || !g.m.is_multiple_of(2) {
            return Err(Error::config("grid.m", "must be even and >= 16"));
        }
        if g.nodes < 4 {
            return Err(Error::config("grid.nodes", "must be >= 4"));
        }
        if !(g.length > 0.0 && g.length.is_finite()) {
            return Err(Error::config("grid.length", "must be positive"));
        }
        let e = &self.equilibrium;
        if !(e.damping > 0.0 && e.damping <= 1.0) {
            return Err(Error::config("equilibrium.damping", "must lie in (0, 1]"));
        }
        if e.max_iter == 0 {
            return Err(Error::config("equilibrium.max_iter", "must be positive"));
        }
        if let Some(eps) = self.rate.epsilon {
            if !(eps > 0.0) {
                return Err(Error::config("rate.epsilon", "must be positive"));
            }
        }
        self.rate.path.validate("rate.path")?;
        check_ladder("gamma_sweep.ladder", &self.gamma_sweep.ladder)?;
        self.gamma_sweep.path.validate("gamma_sweep.path")?;
        let k = &self.kinetic;
        if let Some(eps) = k.epsilon {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::config("kinetic.epsilon", "must be finite and >= 0"));
            }
        }
        k.initial.validate("kinetic.initial")?;
        if !(k.run.t_final > 0.0) {
            return Err(Error::config("kinetic.run.t_final", "must be positive"));
        }
        if !(k.run.dt > 0.0) {
            return Err(Error::config("kinetic.run.dt", "must be positive"));
        }
        if !(1..=2).contains(&k.run.scheme_order) {
            return Err(Error::config("kinetic.run.scheme_order", "must be 1 or 2"));
        }
        if k.run.samples < 2 {
            return Err(Error::config("kinetic.run.samples", "must be >= 2"));
        }
        if let Some(ce) = &k.chapman_enskog {
            check_ladder("kinetic.chapman_enskog.ladder", &ce.ladder)?;
            if !(ce.t_diff > 0.0) {
                return Err(Error::config("kinetic.chapman_enskog.t_diff", "must be positive"));
            }
        }
        self.particles.validate(spec.dim())?;
        let f = &self.fluctuations;
        if f.n_particles.is_empty() || f.n_particles.iter().any(|&n| n < 2) {
            return Err(Error::config("fluctuations.n_particles", "need particle counts >= 2"));
        }
        if !(f.epsilon > 0.0) {
            return Err(Error::config("fluctuations.epsilon", "must be positive"));
        }
        if f.modes == 0 {
            return Err(Error::config("fluctuations.modes", "must be positive"));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        self.model.to_spec()
    }

    pub fn space(&self, dim: usize) -> Result<SpatialGrid> {
        SpatialGrid::cube(dim, self.grid.length, self.grid.nodes)
    }

    /// Sampled model, equilibrium, operators and coefficients on the configured grids.
    pub fn problem(&self) -> Result<Problem> {
        self.problem_with(&self.spec()?)
    }

    pub fn problem_with(&self, spec: &ModelSpec) -> Result<Problem> {
        Problem::build(spec, self.grid.m, self.space(spec.dim())?, &self.equilibrium)
    }
}
