#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rrglmm::covstruct::{cov_to_theta, CovKind, LoadingMatrix};
use rrglmm::family::Family;
use rrglmm::formula::{build_design, parse_formula, Column, DataTable};
use rrglmm::inference::simulate_fit;
use rrglmm::laplace::{JointModel, ParamVector};
use rrglmm::optimize::rng_stream;

pub const ZONES: [&str; 3] = ["W", "N", "S"];
pub const YEARS: [&str; 2] = ["2003", "2010"];

pub fn species_names(q: usize) -> Vec<String> {
    (0..q).map(|j| format!("sp{j}")).collect()
}

/// A `q x d` lower-trapezoid loading matrix with entries drawn from
/// `[-scale, scale]` and positive diagonal.
pub fn random_loading<R: Rng>(q: usize, d: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(q, d, |i, j| {
        if i < j {
            0.0
        } else if i == j {
            scale * (0.5 + 0.5 * rng.random::<f64>())
        } else {
            scale * (2.0 * rng.random::<f64>() - 1.0)
        }
    })
}

/// Rank-2 loading matrix whose row `j` has length `norms[j]` and direction
/// `angles[j]`, rotated to the lower-trapezoid form.
pub fn polar_loading(norms: &[f64], angles: &[f64]) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(norms.len(), 2, |i, k| {
        norms[i] * if k == 0 { angles[i].cos() } else { angles[i].sin() }
    });
    let (lower, _) = rrglmm::covstruct::lower_trapezoid_rotation(&raw);
    DMatrix::from_fn(lower.nrows(), 2, |i, k| if i < k { 0.0 } else { lower[(i, k)] })
}

pub fn rr_theta(loading: &DMatrix<f64>) -> Vec<f64> {
    LoadingMatrix::new(loading.clone()).expect("lower trapezoid").to_theta()
}

pub fn cov_theta(kind: CovKind, cov: &DMatrix<f64>) -> Vec<f64> {
    cov_to_theta(kind, cov).expect("valid covariance")
}

/// Builds the model for `formula` on `data` (which must hold a placeholder
/// response), simulates the response at the parameters returned by `truth`,
/// and returns the completed table, the refreshed model, and the truth.
pub fn simulate(
    mut data: DataTable,
    formula: &str,
    family: Family,
    truth: impl FnOnce(&JointModel) -> ParamVector,
    seed: u64,
) -> (DataTable, JointModel, ParamVector) {
    let spec = parse_formula(formula).expect("formula");
    let model = JointModel::new(build_design(&spec, &data).expect("design"), family).expect("model");
    let psi = truth(&model);
    let y = simulate_fit(&model, &psi, &mut rng_stream(seed, 0)).expect("simulation");
    data.push_column(&spec.response, Column::Numeric(y.iter().map(|&v| Some(v)).collect()))
        .expect("response column");
    let model = model.with_response(y).expect("response");
    (data, model, psi)
}

/// Long-format multi-species design: `sites` sampling units, each observed
/// once per species, with a site-level zone and a numeric covariate.
pub fn species_table(sites: usize, q: usize, seed: u64) -> DataTable {
    let mut rng = rng_stream(seed, 1);
    let names = species_names(q);
    let (mut id, mut sp, mut zone, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..sites {
        let xi: f64 = rng.random::<f64>() - 0.5;
        for name in &names {
            id.push(format!("s{i:04}"));
            sp.push(name.clone());
            zone.push(ZONES[i % 3].to_string());
            x.push(xi);
        }
    }
    let n = id.len();
    let levels: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    DataTable::new()
        .with_categorical("ID", &id)
        .unwrap()
        .with_categorical_levels("Species", &sp, &levels)
        .unwrap()
        .with_categorical_levels("Zone", &zone, &ZONES)
        .unwrap()
        .with_numeric("x", x)
        .unwrap()
        .with_numeric("y", vec![0.0; n])
        .unwrap()
}

/// Survey-style design: stations nested in zones, each visited in two
/// years; every station-year (`ID`) records all `q` species.
pub fn windfarm_table(stations_per_zone: usize, q: usize) -> DataTable {
    let names = species_names(q);
    let (mut zone, mut year, mut station, mut id, mut sp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (z, zn) in ZONES.iter().enumerate() {
        for s in 0..stations_per_zone {
            for yr in YEARS {
                for name in &names {
                    zone.push(zn.to_string());
                    year.push(yr.to_string());
                    station.push(format!("st{z}{s:02}"));
                    id.push(format!("st{z}{s:02}_{yr}"));
                    sp.push(name.clone());
                }
            }
        }
    }
    let n = zone.len();
    let levels: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    DataTable::new()
        .with_categorical_levels("Zone", &zone, &ZONES)
        .unwrap()
        .with_categorical_levels("Year", &year, &YEARS)
        .unwrap()
        .with_categorical("Station", &station)
        .unwrap()
        .with_categorical("ID", &id)
        .unwrap()
        .with_categorical_levels("Species", &sp, &levels)
        .unwrap()
        .with_numeric("abundance", vec![0.0; n])
        .unwrap()
}

pub fn manifest_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

/// Compiled schema from `schemas/<name>.schema.json`.
pub fn schema(name: &str) -> jsonschema::Validator {
    let text = std::fs::read_to_string(manifest_path(&format!("schemas/{name}.schema.json"))).expect("schema file");
    let value: serde_json::Value = serde_json::from_str(&text).expect("schema json");
    jsonschema::validator_for(&value).expect("valid schema")
}

/// Schema violations of `instance`, rendered as strings.
pub fn schema_errors(name: &str, instance: &serde_json::Value) -> Vec<String> {
    schema(name).iter_errors(instance).map(|e| e.to_string()).collect()
}

pub fn read_json(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("artifact")).expect("json")
}

pub fn params(model: &JointModel, beta: Vec<f64>, theta: Vec<Vec<f64>>, log_phi: Option<f64>) -> ParamVector {
    let psi = ParamVector { beta, theta, log_phi };
    assert_eq!(psi.pack().len(), model.n_params(), "parameter length");
    psi
}

/// Rank-`d` covariance kind.
pub fn rr(d: usize) -> CovKind {
    CovKind::Rr { rank: d }
}
