//! Directory-bundle persistence for fitted models.
//!
//! A bundle is a plain directory of CSV files plus a `manifest.txt` of
//! `key = value` lines. Floats are written with their shortest round-trip
//! representation, the coordinate map is rebuilt with the stored resolved
//! ridge, and the classifier head is refit from the stored embedding (head
//! fits are bitwise deterministic), so a loaded model predicts bit-for-bit
//! like the one that was saved.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::classify::{fit_head, HeadSpec};
use crate::embedding::Embedding;
use crate::error::{FsmlError, Result};
use crate::fda::{Bandwidth, Curve, Grid, Kernel, LabeledDataset};
use crate::geometry::{DimensionEstimate, GeodesicDistances};
use crate::interpolate::CoordinateMapModel;
use crate::io;
use crate::tuning::{CvCell, CvOutcome};

use super::{FitMetadata, FsmlModel};

/// Bundle layout version; bumped on any incompatible change.
pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.txt";
const CURVES: &str = "curves.csv";
const LABELS: &str = "labels.csv";
const DISTANCES: &str = "distances.csv";
const EMBEDDING: &str = "embedding.csv";
const EIGENVALUES: &str = "eigenvalues.csv";
const CV: &str = "cv.csv";

pub(super) fn save(model: &FsmlModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| entries.push((k.to_string(), v));

    put("format_version", FORMAT_VERSION.to_string());
    put("defaults_version", model.metadata.defaults_version.to_string());
    put("n", model.dataset.n().to_string());
    put("class_count", model.dataset.class_count().to_string());
    put("d", model.d.to_string());
    put("d_estimated", model.d_estimated.to_string());
    put("k_pca", model.k_pca.to_string());
    put("k_graph", model.k_graph.to_string());
    put("xi", model.xi.to_string());
    put("h_reg", model.map.h_reg().to_string());
    put("map_ridge", model.map.ridge().to_string());
    put("kernel", model.kernel.to_string());
    put("bandwidth", model.bandwidth.to_string());
    if let Some(r) = model.smooth_ridge {
        put("smooth_ridge", r.to_string());
    }
    match model.head_spec {
        HeadSpec::Knn { k } => {
            put("head", "knn".to_string());
            put("head_k", k.to_string());
        }
        HeadSpec::Lda => put("head", "lda".to_string()),
        HeadSpec::Svm { cost } => {
            put("head", "svm".to_string());
            put("head_cost", cost.to_string());
        }
    }
    put("seed", model.metadata.seed.to_string());
    put("epsilon_mds", model.embedding.epsilon_mds.to_string());
    put("clipped_mass", model.embedding.clipped_mass.to_string());
    put("xi_grid", join_floats(&model.metadata.xi_grid));
    put("h_grid", join_floats(&model.metadata.h_grid));
    if let Some(dim) = &model.metadata.dim {
        put("dim_d_hat", dim.d_hat.to_string());
        put("dim_valid", dim.valid.to_string());
        put("dim_used", dim.used.to_string());
        let ratios: Vec<String> = dim
            .ratios
            .iter()
            .map(|r| r.map_or_else(|| "-".to_string(), |v| v.to_string()))
            .collect();
        put("dim_ratios", ratios.join(","));
    }
    if let Some(cv) = &model.metadata.cv {
        put("cv_xi", cv.xi.to_string());
        put("cv_h_reg", cv.h_reg.to_string());
    }
    for (i, (stage, secs)) in model.metadata.timings.iter().enumerate() {
        put(&format!("timing.{i:02}.{stage}"), secs.to_string());
    }

    io::write_manifest(&dir.join(MANIFEST), &entries)?;
    io::write_curves_long(&dir.join(CURVES), &model.ids, model.dataset.curves())?;
    io::write_labels_csv(&dir.join(LABELS), &model.ids, model.dataset.labels())?;
    io::write_matrix_csv(&dir.join(DISTANCES), &model.ids, model.distances.matrix())?;
    io::write_embedding_csv(
        &dir.join(EMBEDDING),
        &model.ids,
        &model.embedding.coords,
        model.dataset.labels(),
    )?;
    io::write_column_csv(
        &dir.join(EIGENVALUES),
        "eigenvalue",
        &model.embedding.eigenvalues,
    )?;
    if let Some(cv) = &model.metadata.cv {
        std::fs::write(dir.join(CV), cv.csv())?;
    }
    Ok(())
}

pub(super) fn load(dir: &Path) -> Result<FsmlModel> {
    let manifest = io::read_manifest(&require(dir, MANIFEST)?)?;
    let version = get(&manifest, "format_version")?;
    if version.parse::<u32>() != Ok(FORMAT_VERSION) {
        return Err(FsmlError::IncompatibleVersion {
            found: version.clone(),
            expected: FORMAT_VERSION,
        });
    }

    let raw = io::read_curves_long(&require(dir, CURVES)?)?;
    if raw.is_empty() {
        return Err(FsmlError::Parse("bundle contains no curves".into()));
    }
    let ids: Vec<String> = raw.iter().map(|c| c.id().to_string()).collect();
    let grid = Grid::new(raw[0].times().to_vec())?;
    let curves: Vec<Curve> = raw
        .iter()
        .map(|c| {
            if c.times() != grid.points() {
                return Err(FsmlError::Parse(format!(
                    "curve `{}` is not on the shared bundle grid",
                    c.id()
                )));
            }
            Curve::new(grid.clone(), c.values().to_vec())
        })
        .collect::<Result<_>>()?;

    let label_pairs = io::read_labels_csv(&require(dir, LABELS)?)?;
    let labels = io::align_labels(&ids, &label_pairs)?;
    let class_count: usize = parse(&manifest, "class_count")?;
    let dataset = LabeledDataset::new(curves, labels, class_count)?;

    let (dist_ids, dist) = io::read_matrix_csv(&require(dir, DISTANCES)?)?;
    if dist_ids != ids {
        return Err(FsmlError::Parse(
            "distance matrix ids disagree with curves.csv".into(),
        ));
    }
    let distances = GeodesicDistances::from_matrix(dist)?;

    let (emb_ids, coords, emb_labels) = io::read_embedding_csv(&require(dir, EMBEDDING)?)?;
    if emb_ids != ids || emb_labels != dataset.labels() {
        return Err(FsmlError::Parse(
            "embedding ids or labels disagree with the training data".into(),
        ));
    }
    let eigenvalues = io::read_column_csv(&require(dir, EIGENVALUES)?, "eigenvalue")?;
    let embedding = Embedding {
        coords,
        eigenvalues,
        epsilon_mds: parse(&manifest, "epsilon_mds")?,
        clipped_mass: parse(&manifest, "clipped_mass")?,
    };

    let d: usize = parse(&manifest, "d")?;
    if embedding.coords.ncols() != d {
        return Err(FsmlError::Parse(format!(
            "embedding has {} columns but manifest says d = {d}",
            embedding.coords.ncols()
        )));
    }
    let kernel: Kernel = get(&manifest, "kernel")?.parse()?;
    let bandwidth: Bandwidth = get(&manifest, "bandwidth")?.parse()?;
    let k_pca: usize = parse(&manifest, "k_pca")?;
    let h_reg: f64 = parse(&manifest, "h_reg")?;
    let map_ridge: f64 = parse(&manifest, "map_ridge")?;
    let head_spec = match get(&manifest, "head")?.as_str() {
        "knn" => HeadSpec::Knn {
            k: parse(&manifest, "head_k")?,
        },
        "lda" => HeadSpec::Lda,
        "svm" => HeadSpec::Svm {
            cost: parse(&manifest, "head_cost")?,
        },
        other => {
            return Err(FsmlError::Parse(format!(
                "unknown classifier head `{other}` in manifest"
            )))
        }
    };

    let map = CoordinateMapModel::new(
        dataset.curves().to_vec(),
        embedding.coords.clone(),
        kernel,
        h_reg,
        k_pca,
        Some(map_ridge),
    )?;
    let head = fit_head(head_spec, &embedding.coords, dataset.labels())?;

    let dim = match manifest.get("dim_d_hat") {
        Some(_) => {
            let ratios = get(&manifest, "dim_ratios")?
                .split(',')
                .map(|s| {
                    if s == "-" {
                        Ok(None)
                    } else {
                        s.parse::<f64>()
                            .map(Some)
                            .map_err(|e| FsmlError::Parse(format!("dim_ratios: {e}")))
                    }
                })
                .collect::<Result<Vec<Option<f64>>>>()?;
            Some(DimensionEstimate {
                dim: d,
                d_hat: parse(&manifest, "dim_d_hat")?,
                ratios,
                valid: parse(&manifest, "dim_valid")?,
                used: parse(&manifest, "dim_used")?,
            })
        }
        None => None,
    };

    let cv = match manifest.get("cv_xi") {
        Some(_) => Some(read_cv(
            &require(dir, CV)?,
            head_spec,
            parse(&manifest, "cv_xi")?,
            parse(&manifest, "cv_h_reg")?,
        )?),
        None => None,
    };

    let mut timings: Vec<(String, f64)> = Vec::new();
    for (key, value) in &manifest {
        if let Some(rest) = key.strip_prefix("timing.") {
            let stage = rest
                .split_once('.')
                .map(|(_, s)| s.to_string())
                .ok_or_else(|| FsmlError::Parse(format!("malformed timing key `{key}`")))?;
            let secs = value
                .parse::<f64>()
                .map_err(|e| FsmlError::Parse(format!("{key}: {e}")))?;
            timings.push((stage, secs));
        }
    }

    Ok(FsmlModel {
        ids,
        dataset,
        d,
        d_estimated: parse_bool(&manifest, "d_estimated")?,
        k_pca,
        k_graph: parse(&manifest, "k_graph")?,
        xi: parse(&manifest, "xi")?,
        kernel,
        bandwidth,
        smooth_ridge: match manifest.get("smooth_ridge") {
            Some(s) => Some(
                s.parse::<f64>()
                    .map_err(|e| FsmlError::Parse(format!("smooth_ridge: {e}")))?,
            ),
            None => None,
        },
        distances,
        embedding,
        map,
        head_spec,
        head,
        metadata: FitMetadata {
            seed: parse(&manifest, "seed")?,
            defaults_version: parse(&manifest, "defaults_version")?,
            xi_grid: split_floats(&get(&manifest, "xi_grid")?)?,
            h_grid: split_floats(&get(&manifest, "h_grid")?)?,
            cv,
            dim,
            timings,
        },
    })
}

/// Rebuilds a [`CvOutcome`] from its cell rows; totals are re-aggregated
/// (exact integer sums over bitwise-identical ξ values).
fn read_cv(path: &Path, head: HeadSpec, xi: f64, h_reg: f64) -> Result<CvOutcome> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("xi,fold,misclassifications,h_inner") => {}
        _ => {
            return Err(FsmlError::Parse(format!(
                "{}: expected header `xi,fold,misclassifications,h_inner`",
                path.display()
            )))
        }
    }
    let mut cells = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(FsmlError::Parse(format!(
                "{}: malformed cv row `{line}`",
                path.display()
            )));
        }
        let bad = |e: &dyn std::fmt::Display| FsmlError::Parse(format!("{}: {e}", path.display()));
        cells.push(CvCell {
            xi: fields[0].parse().map_err(|e| bad(&e))?,
            fold: fields[1].parse().map_err(|e| bad(&e))?,
            misclassifications: fields[2].parse().map_err(|e| bad(&e))?,
            h_inner: fields[3].parse().map_err(|e| bad(&e))?,
        });
    }
    let mut totals: Vec<(f64, usize)> = Vec::new();
    for cell in &cells {
        match totals.last_mut() {
            Some((xi, total)) if xi.to_bits() == cell.xi.to_bits() => {
                *total += cell.misclassifications
            }
            _ => totals.push((cell.xi, cell.misclassifications)),
        }
    }
    Ok(CvOutcome {
        head,
        xi,
        h_reg,
        cells,
        totals,
    })
}

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(FsmlError::MissingSection(name.to_string()))
    }
}

fn get(manifest: &BTreeMap<String, String>, key: &str) -> Result<String> {
    manifest
        .get(key)
        .cloned()
        .ok_or_else(|| FsmlError::Parse(format!("manifest is missing `{key}`")))
}

fn parse<T: std::str::FromStr>(manifest: &BTreeMap<String, String>, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    get(manifest, key)?
        .parse::<T>()
        .map_err(|e| FsmlError::Parse(format!("manifest `{key}`: {e}")))
}

fn parse_bool(manifest: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match get(manifest, key)?.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(FsmlError::Parse(format!(
            "manifest `{key}`: expected true or false, got `{other}`"
        ))),
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn split_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .map_err(|e| FsmlError::Parse(format!("float list: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{fit, FsmlConfig};
    use crate::synth::{generate, ModelId, SynthSpec};

    fn fitted() -> FsmlModel {
        let data = generate(&SynthSpec {
            model: ModelId::II,
            n: 80,
            j: 40,
            noise: true,
            seed: 17,
        })
        .unwrap();
        let config = FsmlConfig {
            grid_points: 40,
            k_pca: 10,
            cv_folds: 4,
            xi_grid: Some(vec![0.0, 400.0]),
            h_grid: Some(vec![1.0, 4.0]),
            seed: 17,
            ..FsmlConfig::default()
        };
        fit(&data.curves, &data.labels, &config).unwrap()
    }

    #[test]
    fn save_load_predict_is_bitwise_identical() {
        let model = fitted();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model");
        model.save(&path).unwrap();
        let loaded = FsmlModel::load(&path).unwrap();

        assert_eq!(loaded.xi().to_bits(), model.xi().to_bits());
        assert_eq!(loaded.h_reg().to_bits(), model.h_reg().to_bits());
        assert_eq!(loaded.d(), model.d());
        assert_eq!(loaded.ids(), model.ids());
        assert_eq!(loaded.embedding().coords, model.embedding().coords);
        assert_eq!(
            loaded.embedding().eigenvalues,
            model.embedding().eigenvalues
        );
        assert_eq!(loaded.distances().matrix(), model.distances().matrix());

        let queries = generate(&SynthSpec {
            model: ModelId::II,
            n: 30,
            j: 40,
            noise: true,
            seed: 18,
        })
        .unwrap();
        let smoothed = model.smooth_queries(&queries.curves).unwrap();
        assert_eq!(
            model.predict_curves(&smoothed).unwrap(),
            loaded.predict_curves(&smoothed).unwrap()
        );
        for (a, b) in model
            .interpolate(&smoothed)
            .unwrap()
            .iter()
            .zip(loaded.interpolate(&smoothed).unwrap().iter())
        {
            assert_eq!(a, b, "interpolated coordinates must round-trip bitwise");
        }

        let cv = model.metadata().cv.as_ref().unwrap();
        let cv2 = loaded.metadata().cv.as_ref().unwrap();
        assert_eq!(cv.cells, cv2.cells);
        assert_eq!(cv.totals.len(), cv2.totals.len());
        for ((xa, ta), (xb, tb)) in cv.totals.iter().zip(&cv2.totals) {
            assert_eq!(xa.to_bits(), xb.to_bits());
            assert_eq!(ta, tb);
        }
        assert_eq!(loaded.metadata().timings, model.metadata().timings);
    }

    #[test]
    fn missing_sections_are_reported_by_name() {
        let model = fitted();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model");
        model.save(&path).unwrap();
        std::fs::remove_file(path.join(DISTANCES)).unwrap();
        let err = FsmlModel::load(&path).unwrap_err();
        match err {
            FsmlError::MissingSection(name) => assert_eq!(name, DISTANCES),
            other => panic!("expected MissingSection, got {other}"),
        }
    }

    #[test]
    fn newer_bundles_are_refused() {
        let model = fitted();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model");
        model.save(&path).unwrap();
        let manifest_path = path.join(MANIFEST);
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        let bumped = text.replace(
            &format!("format_version = {FORMAT_VERSION}"),
            &format!("format_version = {}", FORMAT_VERSION + 1),
        );
        std::fs::write(&manifest_path, bumped).unwrap();
        let err = FsmlModel::load(&path).unwrap_err();
        match err {
            FsmlError::IncompatibleVersion { found, expected } => {
                assert_eq!(found, (FORMAT_VERSION + 1).to_string());
                assert_eq!(expected, FORMAT_VERSION);
            }
            other => panic!("expected IncompatibleVersion, got {other}"),
        }
    }
}
