//! `.nph` model files: TOML holding the scaling family, the phase-type
//! parameters, truncation settings and free-form fit metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NphError, Result};
use crate::matrix::SquareMatrix;
use crate::model::NphModel;
use crate::phase_type::PhaseTypeRep;
use crate::scaling::{FamilyKind, ScalingFamily};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    scaling: ScalingSection,
    phase_type: PhaseTypeSection,
    truncation: TruncationSection,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingSection {
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    theta: Vec<f64>,
    #[serde(default)]
    theta_fixed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseTypeSection {
    alpha: Vec<f64>,
    sub_intensity: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruncationSection {
    eps: f64,
    max_levels: usize,
}

/// Serializes `model` with `metadata`; floats are written in shortest
/// round-trip form, so loading reproduces every parameter bit for bit.
pub fn to_string(model: &NphModel, metadata: &BTreeMap<String, String>) -> Result<String> {
    let scaling = model.scaling();
    let file = ModelFile {
        version: FORMAT_VERSION,
        scaling: ScalingSection {
            family: scaling.kind().name().to_string(),
            c: scaling.kind().spacing(),
            theta: scaling.theta().to_vec(),
            theta_fixed: scaling.theta_fixed(),
        },
        phase_type: PhaseTypeSection {
            alpha: model.ph().alpha().to_vec(),
            sub_intensity: model.ph().sub_intensity().to_rows(),
        },
        truncation: TruncationSection { eps: model.trunc_eps(), max_levels: model.max_levels() },
        metadata: metadata.clone(),
    };
    toml::to_string(&file).map_err(|e| NphError::ModelFile(e.to_string()))
}

/// Parses and validates a model file's contents.
pub fn from_str(text: &str) -> Result<(NphModel, BTreeMap<String, String>)> {
    let file: ModelFile = toml::from_str(text).map_err(|e| NphError::ModelFile(e.message().to_string()))?;
    if file.version != FORMAT_VERSION {
        return Err(NphError::ModelFile(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let s = &file.scaling;
    let need_c =
        |name: &str| s.c.ok_or_else(|| NphError::ModelFile(format!("missing field `c` required by family {name}")));
    let kind = match s.family.as_str() {
        "geom-pareto" => FamilyKind::GeometricPareto { c: need_c("geom-pareto")? },
        "zeta" => FamilyKind::Zeta,
        "disc-weibull" => FamilyKind::DiscretizedWeibull { c: need_c("disc-weibull")? },
        "disc-lognormal" => FamilyKind::DiscretizedLognormal,
        other => return Err(NphError::ModelFile(format!("unknown family `{other}`"))),
    };
    let scaling = ScalingFamily::new(kind, &s.theta)?.fixed(s.theta_fixed);
    let sub = SquareMatrix::from_rows(&file.phase_type.sub_intensity)?;
    let ph = PhaseTypeRep::new(file.phase_type.alpha.clone(), sub)?;
    let model = NphModel::with_truncation(scaling, ph, file.truncation.eps, file.truncation.max_levels)?;
    Ok((model, file.metadata))
}

pub fn save(model: &NphModel, metadata: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let text = to_string(model, metadata)?;
    std::fs::write(path, text).map_err(|source| NphError::Io { path: path.to_path_buf(), source })
}

pub fn load(path: &Path) -> Result<(NphModel, BTreeMap<String, String>)> {
    let text = std::fs::read_to_string(path).map_err(|source| NphError::Io { path: path.to_path_buf(), source })?;
    from_str(&text).map_err(|e| match e {
        NphError::ModelFile(msg) => NphError::ModelFile(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(kind: FamilyKind, p: usize, seed: u64) -> NphModel {
        let scaling = ScalingFamily::with_default_theta(kind).unwrap();
        NphModel::with_truncation(scaling, PhaseTypeRep::random_init(p, seed, 1.7).unwrap(), 1e-9, 500).unwrap()
    }

    #[test]
    fn file_round_trip_keeps_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nph");
        let m = model(FamilyKind::Zeta, 3, 1);
        let meta = BTreeMap::from([("loglik".to_string(), "-12.5".to_string()), ("seed".into(), "1".into())]);
        save(&m, &meta, &path).unwrap();
        let (back, meta_back) = load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta_back, meta);
    }

    #[test]
    fn broken_row_sum_is_rejected() {
        let m = model(FamilyKind::GeometricPareto { c: 1.0 }, 2, 4);
        let text = to_string(&m, &BTreeMap::new()).unwrap();
        let mut file: ModelFile = toml::from_str(&text).unwrap();
        file.phase_type.sub_intensity[0][1] = 5.0;
        let edited = toml::to_string(&file).unwrap();
        assert!(matches!(from_str(&edited), Err(NphError::Validation(_))));
    }

    #[test]
    fn missing_theta_is_named() {
        let m = model(FamilyKind::GeometricPareto { c: 1.0 }, 2, 4);
        let text = to_string(&m, &BTreeMap::new()).unwrap();
        let edited: String = text.lines().filter(|l| !l.starts_with("theta =")).map(|l| format!("{l}\n")).collect();
        let err = from_str(&edited).unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
    }

    #[test]
    fn version_and_family_checks() {
        let m = model(FamilyKind::DiscretizedLognormal, 1, 2);
        let text = to_string(&m, &BTreeMap::new()).unwrap();
        assert!(from_str(&text.replace("version = 1", "version = 9")).unwrap_err().to_string().contains("version"));
        assert!(from_str(&text.replace("disc-lognormal", "pareto")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_is_bit_exact(p in 1usize..6, seed in 0u64..1000, which in 0usize..4, c in 0.1f64..3.0) {
            let kind = [
                FamilyKind::GeometricPareto { c },
                FamilyKind::Zeta,
                FamilyKind::DiscretizedWeibull { c },
                FamilyKind::DiscretizedLognormal,
            ][which];
            let m = model(kind, p, seed);
            let (back, _) = from_str(&to_string(&m, &BTreeMap::new()).unwrap()).unwrap();
            prop_assert_eq!(back.scaling().theta(), m.scaling().theta());
            prop_assert_eq!(back.scaling().kind(), m.scaling().kind());
            prop_assert_eq!(back.ph().alpha(), m.ph().alpha());
            prop_assert_eq!(back.ph().sub_intensity().as_slice(), m.ph().sub_intensity().as_slice());
            prop_assert_eq!(back.trunc_eps().to_bits(), m.trunc_eps().to_bits());
        }
    }
}
