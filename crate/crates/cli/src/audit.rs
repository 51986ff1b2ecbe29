//! Re-derivation of stored certificates from terminal iterates.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use ncgal::{check_sosp, Dims, Family, Instance};
use thiserror::Error;

use crate::run::{iterate_path, INSTANCES_HEADER, RESULTS_HEADER};
use crate::spec::{parse_config, RunSpec, Solver};

/// Relative agreement required between stored and recomputed residuals.
pub const FIELD_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("missing artifact {}", .0.display())]
    MissingArtifacts(PathBuf),
    #[error("malformed artifact {}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },
}

/// Audit verdict for one barrier-method instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub family: Family,
    pub dims: Dims,
    pub seed: u64,
    /// Certificate outcome at the audit tolerances.
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
    pub mismatches: Vec<String>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> AuditError {
    AuditError::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, AuditError> {
    if !path.exists() {
        return Err(AuditError::MissingArtifacts(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(path, e.to_string()))?;
    let found = reader.headers().map_err(|e| malformed(path, e.to_string()))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(malformed(path, "unexpected header"));
    }
    reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| malformed(path, e.to_string()))
}

fn parse_field<T: std::str::FromStr>(path: &Path, raw: &str) -> Result<T, AuditError> {
    raw.parse().map_err(|_| malformed(path, format!("cannot parse `{raw}`")))
}

fn parse_opt(path: &Path, raw: &str) -> Result<Option<f64>, AuditError> {
    if raw.is_empty() {
        Ok(None)
    } else {
        parse_field(path, raw).map(Some)
    }
}

/// Reads a terminal iterate written by [`crate::run::write_iterate`].
pub fn read_iterate(path: &Path) -> Result<(DVector<f64>, DVector<f64>), AuditError> {
    let records = read_csv(path, &["kind", "index", "value"])?;
    let (mut x, mut lambda) = (Vec::new(), Vec::new());
    for r in &records {
        let target = match &r[0] {
            "x" => &mut x,
            "lambda" => &mut lambda,
            other => return Err(malformed(path, format!("unknown kind `{other}`"))),
        };
        let index: usize = parse_field(path, &r[1])?;
        if index != target.len() {
            return Err(malformed(path, "indices out of order"));
        }
        target.push(parse_field::<f64>(path, &r[2])?);
    }
    Ok((DVector::from_vec(x), DVector::from_vec(lambda)))
}

fn agrees(stored: f64, fresh: f64) -> bool {
    (stored.is_infinite() && stored == fresh) || (stored - fresh).abs() <= FIELD_TOL * stored.abs().max(fresh.abs()).max(1e-300)
}

/// Recomputes every barrier-method certificate of the run in `dir` at
/// `(eps, eps2)` and cross-checks the stored residuals, pass claims (when the
/// tolerances equal the run's) and the aggregated pass rates.
pub fn audit(dir: &Path, eps: f64, eps2: f64) -> Result<AuditReport, AuditError> {
    let cfg_path = dir.join("run.cfg");
    let text = fs::read_to_string(&cfg_path).map_err(|_| AuditError::MissingArtifacts(cfg_path.clone()))?;
    let settings = parse_config(&text).map_err(|e| malformed(&cfg_path, e.to_string()))?;
    let spec = RunSpec::from_settings(&settings).map_err(|e| malformed(&cfg_path, e.to_string()))?;
    let same_tolerances = spec.eps == eps && spec.eps2 == eps2;

    let instances_path = dir.join("instances.csv");
    let records = read_csv(&instances_path, &INSTANCES_HEADER)?;
    let mut report = AuditReport::default();
    let mut claims: Vec<(String, bool)> = Vec::new();

    for r in &records {
        let p = &instances_path;
        let family: Family = r[0].parse().map_err(|e: String| malformed(p, e))?;
        let dims: Dims = format!("{}x{}x{}", &r[1], &r[2], &r[3])
            .parse()
            .map_err(|e: String| malformed(p, e))?;
        let solver: Solver = r[4].parse().map_err(|e: String| malformed(p, e))?;
        let seed: u64 = parse_field(p, &r[5])?;
        let stored_pass: bool = parse_field(p, &r[15])?;
        claims.push((format!("{family},{},{},{},{solver}", dims.n, dims.l, dims.m), stored_pass));
        if solver != Solver::BarrierAl || &r[6] != "ok" {
            continue;
        }
        let label = format!("{family} {dims} seed {seed}");
        let (x, lambda) = read_iterate(&iterate_path(dir, family, dims, seed))?;
        let inst = Instance::generate(family, dims, seed);
        let model = inst.model();
        let cert = match check_sosp(model.as_ref(), &x, &lambda, eps, eps2) {
            Ok(c) => c,
            Err(e) => {
                report.mismatches.push(format!("{label}: {e}"));
                continue;
            }
        };
        let stored = [
            ("feasibility", parse_opt(p, &r[10])?),
            ("dual_norm", parse_opt(p, &r[11])?),
            ("cone_violation", parse_opt(p, &r[12])?),
            ("second_order", parse_opt(p, &r[13])?),
        ];
        let fresh = [
            Some(cert.feasibility),
            Some(cert.dual_norm),
            Some(cert.cone.worst_violation),
            cert.second_order,
        ];
        for ((name, s), f) in stored.iter().zip(fresh) {
            let consistent = match (s, f) {
                (Some(s), Some(f)) => agrees(*s, f),
                (None, None) => true,
                _ => false,
            };
            if !consistent {
                report.mismatches.push(format!("{label}: stored {name} {s:?} but recomputed {f:?}"));
            }
        }
        let pass = cert.passes();
        if same_tolerances && pass != stored_pass {
            report
                .mismatches
                .push(format!("{label}: stored pass {stored_pass} but recomputed {pass}"));
        }
        report.entries.push(AuditEntry {
            family,
            dims,
            seed,
            pass,
        });
    }

    let results_path = dir.join("results.csv");
    for r in read_csv(&results_path, &RESULTS_HEADER)? {
        let key = format!("{},{},{},{},{}", &r[0], &r[1], &r[2], &r[3], &r[4]);
        let group: Vec<bool> = claims.iter().filter(|(k, _)| *k == key).map(|(_, p)| *p).collect();
        let instances: usize = parse_field(&results_path, &r[5])?;
        if group.len() != instances {
            report
                .mismatches
                .push(format!("{key}: results.csv counts {instances} instances, instances.csv has {}", group.len()));
            continue;
        }
        let rate = group.iter().filter(|&&p| p).count() as f64 / instances as f64;
        if format!("{rate:.4}") != r[10] {
            report
                .mismatches
                .push(format!("{key}: pass rate {} does not match per-instance claims ({rate:.4})", &r[10]));
        }
    }
    Ok(report)
}
