//! The configuration-driven chain gen → deform → verify → invariants →
//! curvature → report. Every stage reads its upstream artifacts from the
//! output directory, checks their digests, and writes a self-describing
//! JSON envelope (config, config hash, code version, upstream digests,
//! verdict, payload digest). Nothing time-dependent is recorded, so
//! identical configurations give byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ambient::principal_ball_point;
use crate::curvature::{curvature_scan, fiber_second_fundamental_form, orbit_mean_curvature, ScanSettings, ScanTable, Surface};
use crate::deform::{accept_generic, build_family, deformation_bound, AcceptedDraw, FamilySettings, IsospectralFamily};
use crate::error::{IsoError, Result};
use crate::invariants::{ball_volume, compare_against, paired_comparison, IntegralEstimate, PairedComparison, SamplingConfig, SphereIntegrand};
use crate::jmap::JMap;
use crate::linalg::gaussian_matrix;
use crate::sampling::{derived_seed, rng_for};
use crate::verify::{non_isometry_evidence, run_hypothesis_suite, EvidenceConfig, EvidenceRecord, HypothesisReport, SubtorusDirection, SuiteConfig, Verdict as EvidenceVerdict};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const JMAP_FILE: &str = "jmap.json";
pub const FAMILY_FILE: &str = "family.json";
pub const VERIFY_FILE: &str = "verify.json";
pub const INVARIANTS_FILE: &str = "invariants.json";
pub const CURVATURE_FILE: &str = "curvature.json";
pub const CURVATURE_CSV: &str = "curvature.csv";
pub const REPORT_FILE: &str = "report.json";

/// Size of the perturbation applied to the endpoint in the negative control.
pub const NEGATIVE_CONTROL_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCounts {
    /// random points per check in the hypothesis suite
    pub suite: usize,
    /// points per member for the fiber second fundamental form
    pub fiber_points: usize,
    /// multistart restarts of the equivalence search
    pub restarts: usize,
    pub volume: usize,
    pub scalar: usize,
    /// points at which det G = 1 is asserted for the ball volume
    pub ball_check: usize,
    pub scan_points: usize,
    pub scan_planes: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self {
            suite: 20,
            fiber_points: 100,
            restarts: 50,
            volume: 1 << 20,
            scalar: 1 << 18,
            ball_check: 10_000,
            scan_points: 256,
            scan_planes: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunTolerances {
    pub iso: f64,
    pub ineq_floor: f64,
    pub conjugator_identity: f64,
    pub tau: f64,
    pub mean_curvature: f64,
    pub quotient: f64,
    pub fiber: f64,
    pub volume_rel_sigma: f64,
    pub scalar_rel_sigma: f64,
    pub control_sigma: f64,
    pub halving_ratio: f64,
}

impl Default for RunTolerances {
    fn default() -> Self {
        Self {
            iso: 1e-10,
            ineq_floor: 1e-3,
            conjugator_identity: 1e-10,
            tau: 1e-12,
            mean_curvature: 1e-8,
            quotient: 1e-12,
            fiber: 1e-8,
            volume_rel_sigma: 1e-3,
            scalar_rel_sigma: 5e-3,
            control_sigma: 10.0,
            halving_ratio: 0.6,
        }
    }
}

impl RunTolerances {
    pub const NAMES: [&'static str; 11] = [
        "iso",
        "ineq_floor",
        "conjugator_identity",
        "tau",
        "mean_curvature",
        "quotient",
        "fiber",
        "volume_rel_sigma",
        "scalar_rel_sigma",
        "control_sigma",
        "halving_ratio",
    ];

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "iso" => &mut self.iso,
            "ineq_floor" => &mut self.ineq_floor,
            "conjugator_identity" => &mut self.conjugator_identity,
            "tau" => &mut self.tau,
            "mean_curvature" => &mut self.mean_curvature,
            "quotient" => &mut self.quotient,
            "fiber" => &mut self.fiber,
            "volume_rel_sigma" => &mut self.volume_rel_sigma,
            "scalar_rel_sigma" => &mut self.scalar_rel_sigma,
            "control_sigma" => &mut self.control_sigma,
            "halving_ratio" => &mut self.halving_ratio,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(IsoError::Config(format!("tolerance {name} must be positive, got {value}")));
        }
        let slot = self
            .slot(name)
            .ok_or_else(|| IsoError::Config(format!("unknown tolerance {name:?} (known: {})", Self::NAMES.join(", "))))?;
        *slot = value;
        Ok(())
    }

    /// Parses `NAME=VAL` and applies it.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (name, val) = spec
            .split_once('=')
            .ok_or_else(|| IsoError::Config(format!("tolerance override {spec:?} is not NAME=VAL")))?;
        let value: f64 = val
            .trim()
            .parse()
            .map_err(|_| IsoError::Config(format!("tolerance value {val:?} is not a number")))?;
        self.set(name.trim(), value)
    }

    fn validate(&self) -> Result<()> {
        let mut copy = self.clone();
        for name in Self::NAMES {
            let v = *copy.slot(name).expect("listed");
            if !(v > 0.0 && v.is_finite()) {
                return Err(IsoError::Config(format!("tolerance {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Run configuration. Loaded from JSON; fields absent from the file take
/// defaults. `out` is never serialized so it does not enter the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub m: usize,
    pub k: usize,
    pub seed: u64,
    pub steps: usize,
    pub h: f64,
    pub c_list: Vec<f64>,
    pub samples: SampleCounts,
    pub tolerances: RunTolerances,
    /// also estimate the experimental curvature-squared integrals
    pub experimental: bool,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: 5,
            k: 2,
            seed: 42,
            steps: 5,
            h: 5e-3,
            c_list: vec![1.0, 0.5, 0.25, 0.125],
            samples: SampleCounts::default(),
            tolerances: RunTolerances::default(),
            experimental: false,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| IsoError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| IsoError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 {
            return Err(IsoError::Config(format!("m={} and k={} must be positive", self.m, self.k)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(IsoError::Config(format!("step size h must be positive, got {}", self.h)));
        }
        if self.c_list.is_empty() || self.c_list.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(IsoError::Config(format!("c-list must be nonempty and positive, got {:?}", self.c_list)));
        }
        let s = &self.samples;
        if s.volume < crate::invariants::BATCHES || s.scalar < crate::invariants::BATCHES {
            return Err(IsoError::Config(format!("invariant sample counts need at least {} samples", crate::invariants::BATCHES)));
        }
        if s.suite == 0 || s.restarts == 0 || s.scan_points == 0 || s.scan_planes == 0 {
            return Err(IsoError::Config("sample counts must be positive".into()));
        }
        self.tolerances.validate()
    }

    /// Conditions under which the construction is not asserted to deform.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if matches!(self.m, 1 | 2 | 3 | 4 | 6) {
            out.push(format!("m={} is in the excluded set {{1,2,3,4,6}}: no deformation bound applies", self.m));
        }
        if self.k < 2 {
            out.push(format!("k={} < 2: only the trivial subtorus exists and the construction degenerates", self.k));
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(&canonical_bytes(self).expect("config serializes"))
    }

    fn stage_seed(&self, stage: u64) -> u64 {
        derived_seed(self.seed, stage << 32)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sorted-key JSON of a value; the digest input for payloads.
fn canonical_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(&serde_json::to_value(value)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Pass
        } else {
            Self::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Self::Pass
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
        }
    }
}

/// On-disk wrapper of every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub artifact: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub upstream: BTreeMap<String, String>,
    pub verdict: Verdict,
    pub payload: T,
    pub payload_sha256: String,
}

/// Result of one stage: the written file, its digest and the lines to show.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub verdict: Verdict,
    pub path: Option<PathBuf>,
    pub digest: Option<String>,
    pub summary: Vec<String>,
}

fn write_artifact<T: Serialize>(
    cfg: &RunConfig,
    file: &str,
    upstream: BTreeMap<String, String>,
    verdict: Verdict,
    payload: &T,
) -> Result<(PathBuf, String)> {
    fs::create_dir_all(&cfg.out)?;
    let payload = serde_json::to_value(payload)?;
    let digest = sha256_hex(&serde_json::to_vec(&payload)?);
    let env = Envelope {
        artifact: file.trim_end_matches(".json").to_string(),
        version: VERSION.to_string(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        upstream,
        verdict,
        payload,
        payload_sha256: digest.clone(),
    };
    let path = cfg.out.join(file);
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok((path, digest))
}

/// Reads an artifact, refusing it if missing, malformed or tampered with.
pub fn read_artifact(dir: &Path, file: &str) -> Result<Envelope<Value>> {
    let path = dir.join(file);
    let integrity = |detail: String| IsoError::Integrity { path: path.display().to_string(), detail };
    let text = fs::read_to_string(&path).map_err(|e| integrity(format!("cannot read upstream artifact ({e}); run the producing stage first")))?;
    let env: Envelope<Value> = serde_json::from_str(&text).map_err(|e| integrity(format!("malformed artifact: {e}")))?;
    let digest = sha256_hex(&serde_json::to_vec(&env.payload)?);
    if digest != env.payload_sha256 {
        return Err(integrity(format!("payload digest {digest} does not match recorded {}", env.payload_sha256)));
    }
    if env.config.hash() != env.config_hash {
        return Err(integrity(format!("embedded config does not match its digest {}", env.config_hash)));
    }
    Ok(env)
}

fn typed_payload<T: DeserializeOwned>(dir: &Path, file: &str, env: &Envelope<Value>) -> Result<T> {
    serde_json::from_value(env.payload.clone()).map_err(|e| IsoError::Integrity {
        path: dir.join(file).display().to_string(),
        detail: format!("payload does not decode: {e}"),
    })
}

fn check_shape(cfg: &RunConfig, dir: &Path, file: &str, m: usize, k: usize) -> Result<()> {
    if (m, k) != (cfg.m, cfg.k) {
        return Err(IsoError::Integrity {
            path: dir.join(file).display().to_string(),
            detail: format!("artifact has (m, k) = ({m}, {k}) but the configuration asks for ({}, {})", cfg.m, cfg.k),
        });
    }
    Ok(())
}

fn load_family(cfg: &RunConfig) -> Result<(IsospectralFamily, String)> {
    let env = read_artifact(&cfg.out, FAMILY_FILE)?;
    let fam: IsospectralFamily = typed_payload(&cfg.out, FAMILY_FILE, &env)?;
    if fam.is_empty() {
        return Err(IsoError::Integrity { path: cfg.out.join(FAMILY_FILE).display().to_string(), detail: "family has no members".into() });
    }
    check_shape(cfg, &cfg.out, FAMILY_FILE, fam.seed_map().m(), fam.seed_map().k())?;
    Ok((fam, env.payload_sha256))
}

fn upstream_of(entries: &[(&str, &str)]) -> BTreeMap<String, String> {
    entries.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

fn bound_line(m: usize, k: usize) -> String {
    match deformation_bound(m, k) {
        Some(b) => format!("deformation bound: m(m-1)/2 - [m/2]([m/2]+2) = {b}"),
        None if k != 2 => format!("deformation bound: inapplicable (formula stated for k=2, got k={k})"),
        None => format!("deformation bound: inapplicable (m={m} is excluded)"),
    }
}

pub fn run_gen(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut summary = vec![format!("m={}, k={}, requested seed {}", cfg.m, cfg.k, cfg.seed), bound_line(cfg.m, cfg.k)];
    let draw: AcceptedDraw = match accept_generic(cfg.m, cfg.k, cfg.seed) {
        Ok(d) => d,
        Err(e @ IsoError::GenericityUnobtainable { .. }) => {
            summary.push(e.to_string());
            return Ok(Outcome { verdict: Verdict::Fail, path: None, digest: None, summary });
        }
        Err(e) => return Err(e),
    };
    let t = draw.tangents;
    summary.push(format!("accepted seed {} (commutant dimension {})", draw.accepted_seed, draw.commutant_dim));
    summary.push(format!("tangent excess {} (isospectral tangent dim {}, orbit dim {})", t.excess, t.iso_dim, t.orbit_dim));
    let verdict = Verdict::from_bool(draw.commutant_dim == 0 && draw.bound.is_none_or(|b| t.excess as i64 >= b));
    let (path, digest) = write_artifact(cfg, JMAP_FILE, BTreeMap::new(), verdict, &draw)?;
    Ok(Outcome { verdict, path: Some(path), digest: Some(digest), summary })
}

pub fn run_deform(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let env = read_artifact(&cfg.out, JMAP_FILE)?;
    let draw: AcceptedDraw = typed_payload(&cfg.out, JMAP_FILE, &env)?;
    check_shape(cfg, &cfg.out, JMAP_FILE, draw.jmap.m(), draw.jmap.k())?;
    let settings = FamilySettings {
        restarts: cfg.samples.restarts,
        seed: cfg.stage_seed(1),
        iso_tol: cfg.tolerances.iso,
        ..FamilySettings::default()
    };
    let fam = build_family(&draw.jmap, cfg.steps, cfg.h, settings)?;
    let tol = &cfg.tolerances;
    let worst_iso = fam.certificates.iter().map(|c| c.iso_residual).fold(0.0, f64::max);
    let end_floor = fam.certificates.last().map_or(0.0, |c| c.ineq_residual);
    let complete = fam.len() == cfg.steps + 1 && fam.diagnostic.is_none();
    let verdict = Verdict::from_bool(complete && worst_iso <= tol.iso && (cfg.steps == 0 || end_floor >= tol.ineq_floor));
    let mut summary = vec![
        format!("{} members (requested {}), parameters {:?}", fam.len(), cfg.steps + 1, fam.params),
        format!("max power-trace deviation {worst_iso:.3e} (tolerance {:.1e})", tol.iso),
        format!("endpoint equivalence residual floor {end_floor:.3e} over {} restarts (required ≥ {:.1e})", cfg.samples.restarts, tol.ineq_floor),
    ];
    if let Some(d) = &fam.diagnostic {
        summary.push(format!("diagnostic: {d}"));
    }
    let upstream = upstream_of(&[(JMAP_FILE, &env.payload_sha256)]);
    let (path, digest) = write_artifact(cfg, FAMILY_FILE, upstream, verdict, &fam)?;
    summary.push(format!("family digest {digest}"));
    Ok(Outcome { verdict, path: Some(path), digest: Some(digest), summary })
}

/// Fiber and full-torus checks on every family member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberRecord {
    /// max over members and points of the fiber second fundamental form
    pub max_second_fundamental_form: f64,
    /// max deviation of full-torus orbit mean curvature between j_0 and the endpoint
    pub orbit_mean_curvature_deviation: f64,
    pub points: usize,
    pub pass: bool,
}

pub fn fiber_checks(fam: &IsospectralFamily, points: usize, seed: u64, tol: f64) -> Result<FiberRecord> {
    let (m, k) = (fam.seed_map().m(), fam.seed_map().k());
    let mut rng = rng_for(seed);
    let pts: Vec<Vec<f64>> = (0..points).map(|_| principal_ball_point(m, k, &mut rng)).collect();
    let sff = fam
        .members
        .par_iter()
        .map(|j| {
            pts.iter().try_fold(0.0f64, |acc, p| {
                let x = DVector::from_column_slice(&p[..m]);
                let u = DVector::from_column_slice(&p[m..]);
                Ok(acc.max(fiber_second_fundamental_form(j, &x, &u)?))
            })
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let full: Vec<Vec<i64>> = (0..k).map(|i| (0..k).map(|r| i64::from(r == i)).collect()).collect();
    let mut mc: f64 = 0.0;
    for p in &pts {
        let a = orbit_mean_curvature(fam.seed_map(), &full, p)?;
        let b = orbit_mean_curvature(fam.endpoint(), &full, p)?;
        mc = a.vector.iter().zip(&b.vector).fold(mc, |acc, (x, y)| acc.max((x - y).abs()));
    }
    Ok(FiberRecord { max_second_fundamental_form: sff, orbit_mean_curvature_deviation: mc, points, pass: sff <= tol && mc <= tol })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeControl {
    pub epsilon: f64,
    pub failing_pairs: Vec<(usize, usize)>,
    pub max_identity_residual: f64,
    /// true when the perturbed pair is (correctly) rejected
    pub rejected: bool,
}

/// Runs the hypothesis suite on (endpoint, endpoint + ε·noise); it must fail.
pub fn negative_control(fam: &IsospectralFamily, directions: &[SubtorusDirection], cfg: &SuiteConfig, eps: f64) -> Result<NegativeControl> {
    let end = fam.endpoint();
    let mut rng = rng_for(cfg.seed ^ 0xC0);
    let mats = end
        .mats()
        .iter()
        .map(|a| {
            let e = gaussian_matrix(end.m(), end.m(), &mut rng);
            a + (&e - e.transpose()) * (0.5 * eps)
        })
        .collect();
    let perturbed = JMap::new(end.m(), end.k(), mats)?;
    let pair = IsospectralFamily {
        params: vec![0.0, 1.0],
        members: vec![end.clone(), perturbed],
        certificates: Vec::new(),
        diagnostic: None,
    };
    let report = run_hypothesis_suite(&pair, directions, cfg);
    let max_identity = report.records.iter().map(|r| r.identity_residual).fold(0.0, f64::max);
    Ok(NegativeControl { epsilon: eps, rejected: !report.pass, failing_pairs: report.failing_pairs, max_identity_residual: max_identity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyPayload {
    pub directions: Vec<SubtorusDirection>,
    pub suite: HypothesisReport,
    pub negative_control: NegativeControl,
    pub fibers: FiberRecord,
    pub evidence: EvidenceRecord,
}

pub fn run_verify(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let (fam, fam_digest) = load_family(cfg)?;
    let tol = &cfg.tolerances;
    let suite_cfg = SuiteConfig {
        samples: cfg.samples.suite,
        seed: cfg.stage_seed(2),
        tolerances: crate::verify::Tolerances { conjugator_identity: tol.conjugator_identity, tau: tol.tau, mean_curvature: tol.mean_curvature, quotient: tol.quotient },
    };
    let directions = SubtorusDirection::all_up_to(cfg.k, 1);
    let suite = run_hypothesis_suite(&fam, &directions, &suite_cfg);
    let control = negative_control(&fam, &directions, &suite_cfg, NEGATIVE_CONTROL_EPS)?;
    let fibers = fiber_checks(&fam, cfg.samples.fiber_points, cfg.stage_seed(3), tol.fiber)?;
    let evidence_cfg = EvidenceConfig {
        restarts: cfg.samples.restarts,
        seed: cfg.stage_seed(4),
        threshold: tol.ineq_floor,
        ..EvidenceConfig::default()
    };
    let evidence = non_isometry_evidence(fam.seed_map(), fam.endpoint(), &evidence_cfg)?;
    let single = fam.len() == 1;
    let evidence_ok = single || matches!(evidence.verdict, EvidenceVerdict::NotIsometric { .. });
    let verdict = Verdict::from_bool(suite.pass && control.rejected && fibers.pass && evidence_ok);
    let summary = vec![
        format!(
            "hypothesis suite: {} ({} records over {} directions; failing pairs {:?})",
            Verdict::from_bool(suite.pass).label(),
            suite.records.len(),
            directions.len(),
            suite.failing_pairs
        ),
        format!(
            "negative control (ε={:.0e}): {} (max conjugator-identity residual {:.3e})",
            control.epsilon,
            if control.rejected { "rejected as expected" } else { "NOT rejected" },
            control.max_identity_residual
        ),
        format!(
            "fibers: max second fundamental form {:.3e}, orbit mean curvature deviation {:.3e}",
            fibers.max_second_fundamental_form, fibers.orbit_mean_curvature_deviation
        ),
        format!("non-isometry evidence j_0 vs endpoint: {}", evidence.summary),
    ];
    let payload = VerifyPayload { directions, suite, negative_control: control, fibers, evidence };
    let (path, digest) = write_artifact(cfg, VERIFY_FILE, upstream_of(&[(FAMILY_FILE, &fam_digest)]), verdict, &payload)?;
    Ok(Outcome { verdict, path: Some(path), digest: Some(digest), summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantsPayload {
    pub ball_volume: IntegralEstimate,
    pub sphere_volume: PairedComparison,
    pub total_scalar_curvature: PairedComparison,
    /// j_0 against 2·j_0, which is not isospectral
    pub scalar_control: PairedComparison,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub experimental: Vec<PairedComparison>,
}

pub fn run_invariants(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let (fam, fam_digest) = load_family(cfg)?;
    let (j0, end) = (fam.seed_map(), fam.endpoint());
    let seed = cfg.stage_seed(5);
    let tol = &cfg.tolerances;
    let ball = ball_volume(j0, cfg.samples.ball_check, seed)?;
    let vol = compare_against(j0, &[end.clone()], SphereIntegrand::Volume, &SamplingConfig::new(cfg.samples.volume, seed))?.remove(0);
    let scal_cfg = SamplingConfig::new(cfg.samples.scalar, derived_seed(seed, 1));
    let mut scal = compare_against(j0, &[end.clone(), j0.scaled(2.0)], SphereIntegrand::ScalarCurvature, &scal_cfg)?;
    let control = scal.pop().expect("two comparisons");
    let scal = scal.pop().expect("two comparisons");
    let mut experimental = Vec::new();
    if cfg.experimental {
        for integrand in [SphereIntegrand::RicciSquared, SphereIntegrand::RiemannSquared] {
            experimental.push(paired_comparison(j0, end, integrand, &scal_cfg)?);
        }
    }
    let vol_ok = vol.consistent() && vol.sigma <= tol.volume_rel_sigma * vol.a.value.abs();
    let scal_ok = scal.consistent() && scal.sigma <= tol.scalar_rel_sigma * scal.a.value.abs() && scal.a.flagged == 0 && scal.b.flagged == 0;
    let control_ok = control.separated(tol.control_sigma);
    let verdict = Verdict::from_bool(vol_ok && scal_ok && control_ok);
    let line = |c: &PairedComparison| {
        format!(
            "{}: {:.10e} vs {:.10e}, Δ = {:.3e} ({:.2}σ, σ = {:.3e}, relative σ {:.2e})",
            c.invariant,
            c.a.value,
            c.b.value,
            c.difference,
            c.sigma_multiple,
            c.sigma,
            c.sigma / c.a.value.abs()
        )
    };
    let mut summary = vec![format!("ball volume (exact, det G = 1 checked at {} points): {:.15e}", cfg.samples.ball_check, ball.value)];
    summary.push(line(&vol));
    summary.push(line(&scal));
    summary.push(format!("control j vs 2j: {}", line(&control)));
    for e in &experimental {
        summary.push(format!("experimental {}", line(e)));
    }
    let payload = InvariantsPayload { ball_volume: ball, sphere_volume: vol, total_scalar_curvature: scal, scalar_control: control, experimental };
    let (path, digest) = write_artifact(cfg, INVARIANTS_FILE, upstream_of(&[(FAMILY_FILE, &fam_digest)]), verdict, &payload)?;
    Ok(Outcome { verdict, path: Some(path), digest: Some(digest), summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub surface: Surface,
    pub nonincreasing: bool,
    pub ratios: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvaturePayload {
    pub table: ScanTable,
    pub summaries: Vec<ScanSummary>,
    pub csv_sha256: String,
}

/// Nonincreasing sup-statistics, and the last two ratios at most `ratio`.
pub fn scan_passes(table: &ScanTable, ratio: f64) -> bool {
    let r = table.ratios();
    table.is_nonincreasing() && r.iter().rev().take(2).all(|&q| q <= ratio)
}

pub fn run_curvature(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let (fam, fam_digest) = load_family(cfg)?;
    let settings = ScanSettings { points: cfg.samples.scan_points, planes: cfg.samples.scan_planes, seed: cfg.stage_seed(6) };
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut summary = Vec::new();
    for surface in [Surface::Ambient, Surface::Sphere] {
        let table = curvature_scan(fam.seed_map(), &cfg.c_list, surface, settings)?;
        let pass = scan_passes(&table, cfg.tolerances.halving_ratio);
        let stats: Vec<String> = table.rows.iter().map(|r| format!("c={}: {:.4e}", r.c, r.sup_stat)).collect();
        summary.push(format!("{}: {} [{}]", surface.tag(), Verdict::from_bool(pass).label(), stats.join(", ")));
        summaries.push(ScanSummary { surface, nonincreasing: table.is_nonincreasing(), ratios: table.ratios(), pass });
        rows.extend(table.rows);
    }
    let table = ScanTable { rows };
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(CURVATURE_CSV), &csv)?;
    let verdict = Verdict::from_bool(summaries.iter().all(|s| s.pass));
    let payload = CurvaturePayload { table, summaries, csv_sha256: sha256_hex(&csv) };
    let (path, digest) = write_artifact(cfg, CURVATURE_FILE, upstream_of(&[(FAMILY_FILE, &fam_digest)]), verdict, &payload)?;
    summary.push(format!("table written to {}", cfg.out.join(CURVATURE_CSV).display()));
    Ok(Outcome { verdict, path: Some(path), digest: Some(digest), summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub artifact: String,
    pub verdict: Verdict,
    pub payload_sha256: String,
    pub config_hash: String,
}

/// Collects the stage verdicts, checking that every artifact is intact and
/// that each downstream artifact was produced from the artifacts present.
pub fn run_report(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let files = [JMAP_FILE, FAMILY_FILE, VERIFY_FILE, INVARIANTS_FILE, CURVATURE_FILE];
    let envs = files.iter().map(|f| read_artifact(&cfg.out, f)).collect::<Result<Vec<_>>>()?;
    let digests: BTreeMap<&str, &str> = files.iter().zip(&envs).map(|(f, e)| (*f, e.payload_sha256.as_str())).collect();
    for (file, env) in files.iter().zip(&envs) {
        for (up, recorded) in &env.upstream {
            match digests.get(up.as_str()) {
                Some(actual) if actual == recorded => {}
                _ => {
                    return Err(IsoError::Integrity {
                        path: cfg.out.join(file).display().to_string(),
                        detail: format!("was produced from a different {up} (recorded digest {recorded})"),
                    })
                }
            }
        }
    }
    let csv_path = cfg.out.join(CURVATURE_CSV);
    let csv = fs::read(&csv_path).map_err(|e| IsoError::Integrity { path: csv_path.display().to_string(), detail: e.to_string() })?;
    if envs[4].payload.get("csv_sha256").and_then(Value::as_str) != Some(sha256_hex(&csv).as_str()) {
        return Err(IsoError::Integrity { path: csv_path.display().to_string(), detail: "table digest mismatch".into() });
    }
    let stages: Vec<StageEntry> = envs
        .iter()
        .map(|e| StageEntry {
            artifact: e.artifact.clone(),
            verdict: e.verdict,
            payload_sha256: e.payload_sha256.clone(),
            config_hash: e.config_hash.clone(),
        })
        .collect();
    let verdict = Verdict::from_bool(stages.iter().all(|s| s.verdict.is_pass()));
    let summary = stages.iter().map(|s| format!("{:<11} {}  {}", s.artifact, s.verdict.label(), s.payload_sha256)).collect();
    let upstream = digests.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let (path, digest) = write_artifact(cfg, REPORT_FILE, upstream, verdict, &stages)?;
    Ok(Outcome { verdict, path: Some(path), digest: Some(digest), summary })
}

/// Every stage in order; stops at the first error.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<Outcome>> {
    let stages: [fn(&RunConfig) -> Result<Outcome>; 6] = [run_gen, run_deform, run_verify, run_invariants, run_curvature, run_report];
    let mut out = Vec::new();
    for stage in stages {
        let o = stage(cfg)?;
        let stop = o.path.is_none();
        out.push(o);
        if stop {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = RunConfig::from_json(r#"{"m": 7, "samples": {"suite": 3}}"#).unwrap();
        assert_eq!((cfg.m, cfg.k, cfg.seed), (7, 2, 42));
        assert_eq!(cfg.samples.suite, 3);
        assert_eq!(cfg.samples.scalar, 1 << 18);
        assert!(RunConfig::from_json(r#"{"mm": 7}"#).is_err());
        let mut t = RunTolerances::default();
        t.apply_override("conjugator_identity=1e-9").unwrap();
        assert_eq!(t.conjugator_identity, 1e-9);
        assert!(t.apply_override("conjugator_identity=-1").is_err());
        assert!(t.apply_override("nope=1").is_err());
        assert!(t.apply_override("conjugator_identity").is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::default();
        let b = RunConfig { out: PathBuf::from("elsewhere"), ..RunConfig::default() };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn warnings_for_excluded_dimensions() {
        assert!(RunConfig::default().warnings().is_empty());
        assert_eq!(RunConfig { m: 6, k: 1, ..RunConfig::default() }.warnings().len(), 2);
        assert!(bound_line(2, 2).contains("inapplicable"));
        assert!(bound_line(5, 2).ends_with("= 2"));
    }

    #[test]
    fn tampered_artifact_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out: dir.path().to_path_buf(), ..RunConfig::default() };
        let o = run_gen(&cfg).unwrap();
        assert!(o.verdict.is_pass());
        read_artifact(dir.path(), JMAP_FILE).unwrap();
        let path = dir.path().join(JMAP_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let idx = text.find("\"mats\"").unwrap();
        let digit = text[idx..].find(|c: char| c.is_ascii_digit()).unwrap() + idx;
        let mut bytes = text.into_bytes();
        bytes[digit] = if bytes[digit] == b'1' { b'2' } else { b'1' };
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_artifact(dir.path(), JMAP_FILE), Err(IsoError::Integrity { .. })));
        assert!(matches!(run_deform(&cfg), Err(IsoError::Integrity { .. })));
        assert!(matches!(read_artifact(dir.path(), FAMILY_FILE), Err(IsoError::Integrity { .. })));
    }
}
