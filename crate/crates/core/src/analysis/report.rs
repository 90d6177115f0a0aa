use serde::{Deserialize, Serialize};

use super::activations::ActivationSet;
use super::cka::{CenteredGram, Kernel};
use crate::error::{Error, Result};
use crate::modular_net::TaskId;

/// One row/column of a module-pair matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleEntry {
    pub task: TaskId,
    pub module: usize,
    /// Whether both tasks' paths use this module at this layer.
    pub shared: bool,
}

impl ModuleEntry {
    pub fn label(&self) -> String {
        format!(
            "t{}:m{}{}",
            self.task,
            self.module,
            if self.shared { "*" } else { "" }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCka {
    pub layer: usize,
    /// CKA of the two tasks' summed layer outputs; `None` when undefined.
    pub task_cka: Option<f64>,
    /// The first task's path modules, then the second's.
    pub entries: Vec<ModuleEntry>,
    /// Symmetric CKA between every pair of entries; `None` when undefined.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub shared_modules: Vec<usize>,
    /// Why any value above is missing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl LayerCka {
    /// Heatmap as CSV. Shared modules carry a `*` suffix; values are
    /// clamped to [0, 1] and undefined cells left empty.
    pub fn heatmap_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["entry".to_string()];
        header.extend(self.entries.iter().map(ModuleEntry::label));
        w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
        for (entry, row) in self.entries.iter().zip(&self.matrix) {
            let mut record = vec![entry.label()];
            record.extend(
                row.iter()
                    .map(|v| v.map_or(String::new(), |v| format!("{:.6}", v.clamp(0.0, 1.0)))),
            );
            w.write_record(&record).map_err(|e| Error::Io(e.into()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaReport {
    pub setup: String,
    pub kernel: Kernel,
    pub tasks: [TaskId; 2],
    pub samples: usize,
    /// Number of runs averaged into this report.
    pub runs: usize,
    pub layers: Vec<LayerCka>,
    /// Whether the interior layers' mean task CKA exceeds the mean of the
    /// first and last layers; `None` with fewer than three layers or
    /// undefined values.
    pub middle_more_similar: Option<bool>,
}

impl CkaReport {
    fn middle_ordering(layers: &[LayerCka]) -> Option<bool> {
        if layers.len() < 3 {
            return None;
        }
        let vals: Option<Vec<f64>> = layers.iter().map(|l| l.task_cka).collect();
        let vals = vals?;
        let last = vals.len() - 1;
        let middle = vals[1..last].iter().sum::<f64>() / (last - 1) as f64;
        Some(middle > 0.5 * (vals[0] + vals[last]))
    }

    /// Every value in the report, including undefined ones as `None`.
    pub fn values(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.task_cka).chain(l.matrix.iter().flatten().copied()))
    }

    /// Element-wise mean over runs of the same setup. A cell is undefined
    /// only if it is undefined in every run.
    pub fn average(reports: &[CkaReport]) -> Result<CkaReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::input("no reports to average"))?;
        for r in reports {
            let same_layout = r.setup == first.setup
                && r.kernel == first.kernel
                && r.tasks == first.tasks
                && r.layers.len() == first.layers.len()
                && r.layers
                    .iter()
                    .zip(&first.layers)
                    .all(|(a, b)| a.entries == b.entries);
            if !same_layout {
                return Err(Error::input(
                    "cannot average CKA reports with different layouts",
                ));
            }
        }
        let mean = |vals: Vec<Option<f64>>| {
            let defined: Vec<f64> = vals.into_iter().flatten().collect();
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
        };
        let layers: Vec<LayerCka> = first
            .layers
            .iter()
            .enumerate()
            .map(|(l, base)| {
                let size = base.entries.len();
                LayerCka {
                    layer: base.layer,
                    task_cka: mean(reports.iter().map(|r| r.layers[l].task_cka).collect()),
                    entries: base.entries.clone(),
                    matrix: (0..size)
                        .map(|i| {
                            (0..size)
                                .map(|j| {
                                    mean(reports.iter().map(|r| r.layers[l].matrix[i][j]).collect())
                                })
                                .collect()
                        })
                        .collect(),
                    shared_modules: base.shared_modules.clone(),
                    errors: reports
                        .iter()
                        .flat_map(|r| r.layers[l].errors.clone())
                        .collect(),
                }
            })
            .collect();
        Ok(CkaReport {
            setup: first.setup.clone(),
            kernel: first.kernel,
            tasks: first.tasks,
            samples: first.samples,
            runs: reports.iter().map(|r| r.runs).sum(),
            middle_more_similar: Self::middle_ordering(&layers),
            layers,
        })
    }
}

/// Records `Numeric` failures as undefined values; other errors propagate.
fn defined(result: Result<f64>, what: &str, errors: &mut Vec<String>) -> Result<Option<f64>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::Numeric(msg)) => {
            errors.push(format!("{what}: {msg}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Layer-by-layer comparison of two tasks' activations on matched sample
/// counts: task-level CKA plus the all-pairs CKA of their path modules.
pub fn layerwise_cka_report(
    setup: &str,
    a: &[ActivationSet],
    b: &[ActivationSet],
    kernel: Kernel,
) -> Result<CkaReport> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::input(format!(
            "activation sets cover {} vs {} layers",
            a.len(),
            b.len()
        )));
    }
    let samples = a[0].rep.rows();
    let mut layers = Vec::with_capacity(a.len());
    for (sa, sb) in a.iter().zip(b) {
        if sa.layer != sb.layer {
            return Err(Error::input("activation sets are not aligned by layer"));
        }
        if sa.rep.rows() != samples || sb.rep.rows() != samples {
            return Err(Error::input(format!(
                "layer {}: sample counts {} and {} differ from {samples}",
                sa.layer,
                sa.rep.rows(),
                sb.rep.rows()
            )));
        }
        let mut errors = Vec::new();
        let grams =
            |set: &ActivationSet| -> Result<CenteredGram> { CenteredGram::new(&set.rep, kernel) };
        let task_cka = match (grams(sa), grams(sb)) {
            (Ok(ga), Ok(gb)) => defined(ga.cka(&gb), "task", &mut errors)?,
            (Err(Error::Numeric(msg)), _) | (_, Err(Error::Numeric(msg))) => {
                errors.push(format!("task: {msg}"));
                None
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };

        let in_b = |m: usize| sb.modules.iter().any(|(mb, _)| *mb == m);
        let shared_modules: Vec<usize> = sa
            .modules
            .iter()
            .map(|(m, _)| *m)
            .filter(|&m| in_b(m))
            .collect();
        let mut entries = Vec::new();
        let mut module_grams = Vec::new();
        for set in [sa, sb] {
            for (m, rep) in &set.modules {
                let entry = ModuleEntry {
                    task: set.task,
                    module: *m,
                    shared: shared_modules.contains(m),
                };
                let g = match CenteredGram::new(rep, kernel) {
                    Ok(g) => Some(g),
                    Err(Error::Numeric(msg)) => {
                        errors.push(format!("{}: {msg}", entry.label()));
                        None
                    }
                    Err(e) => return Err(e),
                };
                entries.push(entry);
                module_grams.push(g);
            }
        }
        let size = entries.len();
        let mut matrix = vec![vec![None; size]; size];
        for i in 0..size {
            for j in i..size {
                let v = match (&module_grams[i], &module_grams[j]) {
                    (Some(gi), Some(gj)) => {
                        let what = format!("{} vs {}", entries[i].label(), entries[j].label());
                        defined(gi.cka(gj), &what, &mut errors)?
                    }
                    _ => None,
                };
                matrix[i][j] = v;
                matrix[j][i] = v;
            }
        }
        layers.push(LayerCka {
            layer: sa.layer,
            task_cka,
            entries,
            matrix,
            shared_modules,
            errors,
        });
    }
    Ok(CkaReport {
        setup: setup.to_string(),
        kernel,
        tasks: [a[0].task, b[0].task],
        samples,
        runs: 1,
        middle_more_similar: CkaReport::middle_ordering(&layers),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::capture_balanced;
    use crate::data::gen_synthetic_task;
    use crate::modular_net::{
        build_controlled_paths, parse_setup_label, GridShape, ModuleGrid, NormMode,
    };
    use crate::rng;

    fn pair(label: &str) -> (ModuleGrid, crate::data::Dataset) {
        let shape = GridShape {
            layers: 5,
            modules: 4,
            d_in: 6,
            d_hid: 8,
        };
        let mut grid = ModuleGrid::new(shape, NormMode::Shared, 3).unwrap();
        let mut r = rng::stream(3, 50);
        let (pa, pb) = build_controlled_paths(5, 4, 2, &parse_setup_label(label).unwrap()).unwrap();
        for p in [pa, pb] {
            let t = grid.register_task(3, &mut r).unwrap();
            grid.assign_path(t, p).unwrap();
        }
        let (_, val) = gen_synthetic_task(&mut r, 3, 60, 6, 2.0).unwrap();
        (grid, val)
    }

    #[test]
    fn identical_sets_give_unit_similarity() {
        let (grid, val) = pair("no layer");
        let a = capture_balanced(&grid, 0, &val, 36).unwrap();
        let r = layerwise_cka_report("self", &a, &a, Kernel::default()).unwrap();
        for l in &r.layers {
            assert!((l.task_cka.unwrap() - 1.0).abs() < 1e-9);
            for i in 0..l.entries.len() {
                assert!((l.matrix[i][i].unwrap() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shared_modules_are_flagged_and_matrices_symmetric() {
        let (grid, val) = pair("layer 3");
        let a = capture_balanced(&grid, 0, &val, 36).unwrap();
        let b = capture_balanced(&grid, 1, &val, 36).unwrap();
        let r = layerwise_cka_report("layer 3", &a, &b, Kernel::Linear).unwrap();
        assert_eq!(r.layers.len(), 5);
        for l in &r.layers {
            let expect: Vec<usize> = if l.layer == 2 { vec![0, 1] } else { vec![] };
            assert_eq!(l.shared_modules, expect);
            assert_eq!(l.entries.len(), 4);
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(l.matrix[i][j], l.matrix[j][i]);
                }
            }
        }
        assert!(r
            .values()
            .flatten()
            .all(|v| (-1e-9..=1.0 + 1e-9).contains(&v)));
        let csv = r.layers[2].heatmap_csv().unwrap();
        assert!(
            csv.starts_with("entry,t0:m0*,t0:m1*,t1:m0*,t1:m1*"),
            "{csv}"
        );
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn mismatched_sample_counts_are_rejected() {
        let (grid, val) = pair("layer 1");
        let a = capture_balanced(&grid, 0, &val, 36).unwrap();
        let b = capture_balanced(&grid, 1, &val, 30).unwrap();
        assert!(layerwise_cka_report("x", &a, &b, Kernel::Linear).is_err());
    }

    #[test]
    fn averaging_runs() {
        let (grid, val) = pair("layer 123");
        let a = capture_balanced(&grid, 0, &val, 36).unwrap();
        let b = capture_balanced(&grid, 1, &val, 36).unwrap();
        let r = layerwise_cka_report("layer 123", &a, &b, Kernel::Linear).unwrap();
        let avg = CkaReport::average(&[r.clone(), r.clone()]).unwrap();
        assert_eq!(avg.runs, 2);
        for (x, y) in avg.values().zip(r.values()) {
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-12);
        }
        let mut other = r.clone();
        other.setup = "other".into();
        assert!(CkaReport::average(&[r, other]).is_err());
    }
}
