//! Experiment configuration, execution and result records.
//!
//! A configuration is a TOML file with one `[experiment]` table and optional
//! `[model]`, `[mc]`, `[window]`, `[observable]`, `[ibp]` and `[output]`
//! tables; every key outside `[experiment]` has a default. The README lists
//! the keys.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::cascade_overlap_law;
use crate::coalescent::composition_overlap_law;
use crate::eggi::{eggi_residual, ibp_check, CascadeSource, GibbsSource, IbpSettings};
use crate::error::{Error, Result};
use crate::extremes::{block_max_law, forbidden_pair_rate, window_count, window_reference, Interval};
use crate::gibbs::{
    analytic_free_energy, free_energy_shift, mean_free_energy, overlap_histogram, ultrametric_violation_rate,
};
use crate::model::{omega, ModelParams, DEFAULT_N_CAP};
use crate::observable::{ArrayObservable, ScalarObservable};
use crate::parallel::with_workers;
use crate::stats::Estimate;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    FreeEnergy,
    Overlaps,
    Ultrametric,
    Extremes,
    ForbiddenPairs,
    Cascade,
    Coalescent,
    Eggi,
    Ibp,
}

impl Kind {
    pub const ALL: [Kind; 9] = [
        Kind::FreeEnergy,
        Kind::Overlaps,
        Kind::Ultrametric,
        Kind::Extremes,
        Kind::ForbiddenPairs,
        Kind::Cascade,
        Kind::Coalescent,
        Kind::Eggi,
        Kind::Ibp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::FreeEnergy => "free-energy",
            Kind::Overlaps => "overlaps",
            Kind::Ultrametric => "ultrametric",
            Kind::Extremes => "extremes",
            Kind::ForbiddenPairs => "forbidden-pairs",
            Kind::Cascade => "cascade",
            Kind::Coalescent => "coalescent",
            Kind::Eggi => "eggi",
            Kind::Ibp => "ibp",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("kind", format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Jsonl,
    Csv,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::config("format", format!("expected csv or jsonl, got `{s}`"))),
        }
    }
}

/// Replica source of the `eggi` experiment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    #[default]
    Cascade,
    Gibbs,
    GibbsUnperturbed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Kind,
    #[serde(default)]
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(rename = "N")]
    pub n: u32,
    pub a1: f64,
    pub beta: f64,
    pub delta: f64,
    pub alpha: f64,
    pub cap: u32,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n: 16,
            a1: 0.6,
            beta: 2.0,
            delta: 1.0,
            alpha: 4.0,
            cap: DEFAULT_N_CAP,
        }
    }
}

/// Monte Carlo controls. `draws = 0` asks for exact inner brackets where
/// the experiment has them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub seeds: u64,
    pub draws: u64,
    pub inner: u64,
    pub eps: f64,
    pub n_top: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            seeds: 1000,
            draws: 0,
            inner: 100,
            eps: 1e-6,
            n_top: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    pub m1: [f64; 2],
    pub m2: [f64; 2],
    pub m: [f64; 2],
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            m1: [0.0, 1.0],
            m2: [0.0, 1.0],
            m: [-2.0, 2.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservableSection {
    pub f: ArrayObservable,
    pub g: ScalarObservable,
    pub s: usize,
    pub source: Source,
}

impl Default for ObservableSection {
    fn default() -> Self {
        Self {
            f: ArrayObservable::Monomial([((1, 2), 1)].into_iter().collect()),
            g: ScalarObservable::Power(1),
            s: 2,
            source: Source::Cascade,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IbpSection {
    pub p: u32,
    pub beta_p: f64,
    /// Defaults to `N^{-1/16}`.
    pub delta_n: Option<f64>,
    pub s: usize,
    pub f: ArrayObservable,
}

impl Default for IbpSection {
    fn default() -> Self {
        Self {
            p: 2,
            beta_p: 1.0,
            delta_n: None,
            s: 1,
            f: ArrayObservable::One,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Directory for result files; records are only returned when absent.
    pub dir: Option<PathBuf>,
    pub format: Format,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub window: WindowSection,
    #[serde(default)]
    pub observable: ObservableSection,
    #[serde(default)]
    pub ibp: IbpSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn interval(field: &str, v: [f64; 2]) -> Result<Interval> {
    if !(v[0].is_finite() && v[1].is_finite() && v[0] <= v[1]) {
        return Err(Error::config(field, "need finite lo <= hi"));
    }
    Ok(Interval { lo: v[0], hi: v[1] })
}

impl ExperimentConfig {
    pub fn new(kind: Kind) -> Self {
        Self {
            experiment: ExperimentSection { kind, master_seed: 0 },
            model: Default::default(),
            mc: Default::default(),
            window: Default::default(),
            observable: Default::default(),
            ibp: Default::default(),
            output: Default::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn params(&self) -> Result<ModelParams> {
        let m = &self.model;
        ModelParams::new(m.n, m.a1, m.delta, m.alpha, m.beta)?.with_cap(m.cap)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        let mc = &self.mc;
        if mc.seeds == 0 {
            return Err(Error::config("seeds", "must be positive"));
        }
        if mc.inner == 0 || mc.n_top == 0 {
            return Err(Error::config("mc", "inner and n_top must be positive"));
        }
        if !(mc.eps > 0.0 && mc.eps <= 1e-2) {
            return Err(Error::config("eps", "must lie in (0, 1e-2]"));
        }
        interval("window.m1", self.window.m1)?;
        interval("window.m2", self.window.m2)?;
        interval("window.m", self.window.m)?;
        if self.observable.s < 2 {
            return Err(Error::config("observable.s", "must be at least 2"));
        }
        if self.ibp.p < 1 || self.ibp.s < 1 {
            return Err(Error::config("ibp", "p and s must be at least 1"));
        }
        if let Some(d) = self.ibp.delta_n {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::config("ibp.delta_n", "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration without its output table.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        hex::encode(Sha256::digest(c.emit().as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub kind: Kind,
    pub config_digest: String,
    pub estimates: Vec<Estimate>,
    pub wall_time_s: f64,
    pub version: String,
}

fn estimates(c: &ExperimentConfig) -> Result<Vec<Estimate>> {
    let p = c.params()?;
    let (n, master) = (c.mc.seeds, c.experiment.master_seed);
    let mc = &c.mc;
    Ok(match c.experiment.kind {
        Kind::FreeEnergy => {
            let bound = p.beta * p.beta / 2.0 * p.a2() * p.delta * omega(p.n as f64, p.alpha);
            vec![
                mean_free_energy(&p, false, n, master)?.renamed("free_energy"),
                mean_free_energy(&p, true, n, master)?.renamed("free_energy_perturbed"),
                free_energy_shift(&p, n, master)?,
                Estimate::exact("shift_upper_bound", bound),
                Estimate::exact("analytic_free_energy", analytic_free_energy(p.beta, &p)),
            ]
        }
        Kind::Overlaps => overlap_histogram(&p, true, n, mc.draws, master)?.to_vec(),
        Kind::Ultrametric => vec![ultrametric_violation_rate(&p, true, n, mc.draws, master)?],
        Kind::Extremes => {
            let (m1, m2) = (interval("window.m1", c.window.m1)?, interval("window.m2", c.window.m2)?);
            vec![
                window_count(&p, true, &m1, &m2, n, master)?,
                Estimate::exact("window_reference", window_reference(&p, &m1, &m2)),
                Estimate::exact("ks_block1", block_max_law(&p, 1, n, master)?),
                Estimate::exact("ks_block2", block_max_law(&p, 2, n, master)?),
            ]
        }
        Kind::ForbiddenPairs => {
            let m = interval("window.m", c.window.m)?;
            vec![forbidden_pair_rate(&p, true, &m, n, master)?]
        }
        Kind::Cascade => {
            let (law, sq) = cascade_overlap_law(&p, p.beta, mc.eps, n, master)?;
            law.into_iter().chain([sq]).collect()
        }
        Kind::Coalescent => {
            let (law, sq) = composition_overlap_law(&p, p.beta, mc.n_top, n, master)?;
            law.into_iter().chain([sq]).collect()
        }
        Kind::Eggi => {
            let o = &c.observable;
            let r = match o.source {
                Source::Cascade => {
                    let src = CascadeSource {
                        params: p,
                        beta: p.beta,
                        eps: mc.eps,
                    };
                    eggi_residual(&src, &o.f, &o.g, o.s, n, mc.inner, master)?
                }
                Source::Gibbs | Source::GibbsUnperturbed => {
                    let src = GibbsSource {
                        params: p,
                        beta: p.beta,
                        perturbed: o.source == Source::Gibbs,
                    };
                    eggi_residual(&src, &o.f, &o.g, o.s, n, mc.inner, master)?
                }
            };
            vec![r]
        }
        Kind::Ibp => {
            let st = IbpSettings {
                p_power: c.ibp.p,
                beta_p: c.ibp.beta_p,
                delta_n: c.ibp.delta_n.unwrap_or_else(|| IbpSettings::default_delta(p.n)),
                s: c.ibp.s,
                f: c.ibp.f.clone(),
                n_draws: mc.draws.max(1),
            };
            let r = ibp_check(&p, &st, n, master)?;
            vec![r.lhs, r.rhs, r.diff]
        }
    })
}

/// Runs the experiment on `workers` threads (the global pool when `None`).
/// Results depend only on the configuration, not on the worker count.
pub fn run(config: &ExperimentConfig, workers: Option<usize>) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    let start = Instant::now();
    let est = match workers {
        Some(w) => with_workers(w, || estimates(config))??,
        None => estimates(config)?,
    };
    Ok(vec![ResultRecord {
        kind: config.experiment.kind,
        config_digest: config.digest(),
        estimates: est,
        wall_time_s: start.elapsed().as_secs_f64(),
        version: VERSION.to_string(),
    }])
}

pub const CSV_HEADER: &str = "kind,config_digest,name,mean,std_error,n_samples,wall_time_s,version";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders records as JSON lines or as CSV with one row per estimate.
pub fn render(records: &[ResultRecord], format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Jsonl => {
            for r in records {
                out.push_str(&serde_json::to_string(r).expect("records serialize"));
                out.push('\n');
            }
        }
        Format::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in records {
                for e in &r.estimates {
                    out.push_str(&format!(
                        "{},{},{},{:e},{:e},{},{},{}\n",
                        r.kind,
                        r.config_digest,
                        csv_field(&e.name),
                        e.mean,
                        e.std_error,
                        e.n_samples,
                        r.wall_time_s,
                        r.version
                    ));
                }
            }
        }
    }
    out
}

/// Appends the records to `<dir>/<kind>-<digest prefix>.<ext>` and returns
/// the file path.
pub fn write_records(records: &[ResultRecord], dir: &Path, format: Format) -> Result<PathBuf> {
    let first = records.first().ok_or_else(|| Error::invalid("no records to write"))?;
    let ext = match format {
        Format::Jsonl => "jsonl",
        Format::Csv => "csv",
    };
    let io = |e: std::io::Error| Error::invalid(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let path = dir.join(format!("{}-{}.{ext}", first.kind, &first.config_digest[..16]));
    let mut text = render(records, format);
    if format == Format::Csv && path.exists() {
        // append without repeating the header
        text = text.split_once('\n').map(|x| x.1.to_string()).unwrap_or_default();
    }
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(io)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: Kind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(kind);
        c.model.n = 10;
        c.mc.seeds = 20;
        c.mc.n_top = 100;
        c.mc.eps = 1e-3;
        c.mc.inner = 10;
        c
    }

    #[test]
    fn config_round_trip() {
        let mut c = small(Kind::Eggi);
        c.observable.f = "ind:q12=a1".parse().unwrap();
        c.observable.source = Source::GibbsUnperturbed;
        c.ibp.delta_n = Some(0.5);
        c.output.dir = Some("out".into());
        c.output.format = Format::Csv;
        let text = c.emit();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
        let minimal = ExperimentConfig::parse("[experiment]\nkind = \"overlaps\"\n").unwrap();
        assert_eq!(minimal, ExperimentConfig::new(Kind::Overlaps));
    }

    #[test]
    fn field_level_errors() {
        let bad = |t: &str| ExperimentConfig::parse(t).unwrap_err();
        assert!(matches!(bad("[experiment]\nkind = \"nope\"\n"), Error::Config { .. }));
        assert!(
            matches!(bad("[experiment]\nkind = \"ibp\"\n[model]\nN = 15\n"), Error::Config { field, .. } if field == "N")
        );
        assert!(
            matches!(bad("[experiment]\nkind = \"ibp\"\n[mc]\nseeds = 0\n"), Error::Config { field, .. } if field == "seeds")
        );
        assert!(matches!(
            bad("[experiment]\nkind = \"ibp\"\n[mc]\nbogus = 1\n"),
            Error::Config { .. }
        ));
        assert!(matches!(
            bad("[experiment]\nkind = \"ibp\"\n[model]\nN = 40\n"),
            Error::CapExceeded { .. }
        ));
    }

    #[test]
    fn every_kind_runs() {
        for kind in Kind::ALL {
            let c = small(kind);
            let r = run(&c, Some(1)).unwrap();
            assert_eq!(r.len(), 1);
            for e in &r[0].estimates {
                assert!(e.std_error >= 0.0 && e.mean.is_finite(), "{kind}: {e:?}");
                if e.name.starts_with("P(") {
                    assert!((0.0..=1.0).contains(&e.mean));
                }
            }
        }
    }

    #[test]
    fn histogram_record_sums_to_one() {
        let mut c = small(Kind::Overlaps);
        c.model.n = 12;
        let r = run(&c, None).unwrap();
        assert_eq!(r[0].estimates.len(), 4);
        let total: f64 = r[0].estimates.iter().map(|e| e.mean).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_across_workers() {
        for kind in [Kind::Overlaps, Kind::Cascade, Kind::Eggi] {
            let c = small(kind);
            let a = run(&c, Some(1)).unwrap();
            let b = run(&c, Some(8)).unwrap();
            let again = run(&c, Some(1)).unwrap();
            for ((x, y), z) in a[0].estimates.iter().zip(&b[0].estimates).zip(&again[0].estimates) {
                assert_eq!(x, z);
                assert!((x.mean - y.mean).abs() <= 1e-10 * x.mean.abs().max(1e-300));
            }
            assert_eq!(a[0].config_digest, b[0].config_digest);
        }
    }

    #[test]
    fn output_files() {
        let dir = std::env::temp_dir().join(format!("glasslab-harness-{}", std::process::id()));
        let c = small(Kind::Ultrametric);
        let r = run(&c, None).unwrap();
        let p = write_records(&r, &dir, Format::Csv).unwrap();
        write_records(&r, &dir, Format::Csv).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| *l == CSV_HEADER).count(), 1);
        assert_eq!(text.lines().count(), 3);
        assert!(p
            .file_name()
            .unwrap()
            .to_str()
            .unwrap()
            .contains(&r[0].config_digest[..16]));
        let j = write_records(&r, &dir, Format::Jsonl).unwrap();
        let line = fs::read_to_string(j).unwrap();
        let back: ResultRecord = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        assert_eq!(back.estimates[0].mean, r[0].estimates[0].mean);
        fs::remove_dir_all(dir).unwrap();
    }
}
