//! Stage implementations behind the subcommands.

use std::path::Path;

use lexcon_core::dataset::{read_jsonl, read_pairs};
use lexcon_core::evaluation::render_table;
use lexcon_core::experiment::{
    completion_rate, decode_corpus, evaluate_records, model_config_for, postprocess_records, prepare_data, sweep_beams,
    sweep_csv, DecodedRecord, ExperimentConfig, PreparedData, Setting, System, SystemKind,
};
use lexcon_core::model::{grad_check, init_model, load_checkpoint, make_example, save_checkpoint, Model, ModelConfig};
use lexcon_core::{EvalReport, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::config::render;
use crate::error::{CliError, CliResult, Context};
use crate::store::{jsonl_bytes, setting_name, write_atomic, Store};

/// Scores of one setting as stored under `reports/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub setting: Setting,
    pub label: String,
    /// Percent of sentences that finished with every constraint token met.
    pub completion_rate: f64,
    pub report: EvalReport,
}

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub store: Store,
}

fn exists(path: &Path) -> bool {
    path.is_file()
}

fn require(path: &Path, hint: &str) -> CliResult<()> {
    if exists(path) {
        Ok(())
    } else {
        Err(CliError::Data(format!("missing {}; {hint}", path.display())))
    }
}

fn read_records(path: &Path) -> CliResult<Vec<DecodedRecord>> {
    read_jsonl(path).context(|| format!("reading {}", path.display()))
}

fn to_json(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("reports serialize to JSON");
    bytes.push(b'\n');
    bytes
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, workdir: &Path) -> CliResult<Self> {
        let store = Store::new(workdir, &cfg);
        let path = store.config_path();
        if !exists(&path) {
            write_atomic(&path, render(&cfg)?.as_bytes())?;
        }
        Ok(Self { cfg, store })
    }

    /// Load the prepared dataset, generating it first if needed.
    pub fn prepare(&self) -> CliResult<PreparedData> {
        let (train, test, vocab) = (self.store.train_path(), self.store.test_path(), self.store.vocab_path());
        if exists(&train) && exists(&test) && exists(&vocab) {
            eprintln!("data: reusing {}", self.store.data_dir().display());
            return Ok(PreparedData {
                train: read_pairs(&train).context(|| format!("reading {}", train.display()))?,
                test: read_pairs(&test).context(|| format!("reading {}", test.display()))?,
                vocab: Vocabulary::load(&vocab).context(|| format!("reading {}", vocab.display()))?,
            });
        }
        let data = prepare_data(&self.cfg.data_config(), &self.cfg.sampler).context(|| "preparing data".into())?;
        write_atomic(&train, &jsonl_bytes(&data.train))?;
        write_atomic(&test, &jsonl_bytes(&data.test))?;
        let tmp = vocab.with_extension("json.tmp");
        data.vocab.save(&tmp).context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &vocab).context(|| format!("writing {}", vocab.display()))?;
        eprintln!(
            "data: {} train / {} test sentences, {} tokens -> {}",
            data.train.len(),
            data.test.len(),
            data.vocab.len(),
            self.store.data_dir().display()
        );
        Ok(data)
    }

    pub fn train(&self, system: Option<SystemKind>, member: Option<usize>) -> CliResult<()> {
        let data = self.prepare()?;
        let wanted = self
            .store
            .all_members()
            .into_iter()
            .filter(|&(k, i)| system.is_none_or(|s| s == k) && member.is_none_or(|m| m == i));
        let mut any = false;
        for (kind, index) in wanted {
            any = true;
            let path = self.store.model_path(kind, index);
            if exists(&path) {
                eprintln!("train: reusing {}", path.display());
                continue;
            }
            let name = format!("{}{index}", kind.as_str());
            let outcome = self.cfg.train_member(&data, kind, index).context(|| format!("training {name}"))?;
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
            }
            save_checkpoint(&outcome.model, &path).context(|| format!("writing {}", path.display()))?;
            let tail = &outcome.losses[outcome.losses.len().saturating_sub(50)..];
            let loss = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            eprintln!("train: {name} final loss {loss:.4} -> {}", path.display());
        }
        if !any {
            return Err(CliError::Config(format!("no such member (ensemble_size is {})", self.cfg.ensemble_size)));
        }
        Ok(())
    }

    fn load_models(&self, setting: Setting) -> CliResult<Vec<Model>> {
        self.store
            .members(setting)
            .into_iter()
            .map(|(kind, index)| {
                let path = self.store.model_path(kind, index);
                require(&path, "run `lexcon train` first")?;
                load_checkpoint(&path).context(|| format!("reading {}", path.display()))
            })
            .collect()
    }

    /// Decode each setting; returns the worst threshold violation, if any,
    /// after every output has been written.
    fn decode_settings(&self, settings: &[Setting], threshold: f64) -> CliResult<Option<CliError>> {
        let data = self.prepare()?;
        let mut violation: Option<CliError> = None;
        for &s in settings {
            let path = self.store.raw_path(s);
            let records = if exists(&path) {
                eprintln!("decode: reusing {}", path.display());
                read_records(&path)?
            } else {
                let models = self.load_models(s)?;
                let system = System { models: &models, input: s.input(), space: self.cfg.ensemble_space };
                let dcfg = self.cfg.decode.for_setting(s);
                let records = decode_corpus(&system, &data.test, &data.vocab, &self.cfg.sampler, &dcfg)
                    .context(|| format!("decoding {}", setting_name(s)))?;
                write_atomic(&path, &jsonl_bytes(&records))?;
                records
            };
            let completion = completion_rate(&records, &data.test, &data.vocab).context(|| "completion rate".into())?;
            eprintln!("decode: {} completion {completion:.2}% -> {}", setting_name(s), path.display());
            let failed = 100.0 - completion;
            if s.is_constrained() && failed > threshold {
                let worse = match &violation {
                    Some(CliError::FailureThreshold { failed_pct, .. }) => failed > *failed_pct,
                    _ => true,
                };
                if worse {
                    violation = Some(CliError::FailureThreshold {
                        setting: setting_name(s).into(),
                        failed_pct: failed,
                        threshold,
                    });
                }
            }
        }
        Ok(violation)
    }

    pub fn decode(&self, settings: &[Setting], threshold: f64) -> CliResult<()> {
        match self.decode_settings(settings, threshold)? {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn postprocess(&self, settings: &[Setting]) -> CliResult<()> {
        let data = self.prepare()?;
        for &s in settings {
            let out = self.store.post_path(s);
            if exists(&out) {
                eprintln!("postprocess: reusing {}", out.display());
                continue;
            }
            let raw = self.store.raw_path(s);
            require(&raw, "run `lexcon decode` first")?;
            let fixed = postprocess_records(&read_records(&raw)?, &data.test).context(|| "post-processing".into())?;
            let repairs: usize = fixed.iter().filter_map(|r| r.repairs).sum();
            write_atomic(&out, &jsonl_bytes(&fixed))?;
            eprintln!("postprocess: {} {repairs} repairs -> {}", setting_name(s), out.display());
        }
        Ok(())
    }

    fn evaluate_settings(&self, settings: &[Setting]) -> CliResult<Vec<SettingReport>> {
        let data = self.prepare()?;
        let mut rows = Vec::new();
        for &s in settings {
            let path = self.store.report_path(s);
            if exists(&path) {
                let bytes = std::fs::read(&path).context(|| format!("reading {}", path.display()))?;
                let row =
                    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                rows.push(row);
                continue;
            }
            let post = self.store.post_path(s);
            require(&post, "run `lexcon postprocess` first")?;
            let records = read_records(&post)?;
            let report = evaluate_records(&records, &data.test).context(|| "scoring".into())?;
            let completion = completion_rate(&records, &data.test, &data.vocab).context(|| "completion rate".into())?;
            let row = SettingReport {
                setting: s,
                label: s.label(self.store.members(s).len()),
                completion_rate: completion,
                report,
            };
            write_atomic(&path, &to_json(&row))?;
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn evaluate(&self, settings: &[Setting]) -> CliResult<()> {
        print!("{}", results_table(&self.evaluate_settings(settings)?));
        Ok(())
    }

    pub fn run(&self, threshold: f64) -> CliResult<()> {
        self.prepare()?;
        self.train(None, None)?;
        let violation = self.decode_settings(&Setting::ALL, threshold)?;
        self.postprocess(&Setting::ALL)?;
        let rows = self.evaluate_settings(&Setting::ALL)?;
        let table = results_table(&rows);
        let summary: Vec<_> = rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "setting": r.setting,
                    "label": r.label,
                    "bleu": r.report.bleu,
                    "term_pct": r.report.term_pct,
                    "sent_pct": r.report.sent_pct,
                    "combined": r.report.combined,
                    "completion_rate": r.completion_rate,
                })
            })
            .collect();
        write_atomic(&self.store.results_path("txt"), table.as_bytes())?;
        write_atomic(&self.store.results_path("json"), &to_json(&summary))?;
        print!("{table}");
        eprintln!("run: results -> {}", self.store.results_path("txt").display());
        match violation {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn sweep(&self, beams: &[usize]) -> CliResult<()> {
        let beams = if beams.is_empty() { self.cfg.decode.sweep_beams.clone() } else { beams.to_vec() };
        if beams.is_empty() || beams.contains(&0) {
            return Err(CliError::Config("beam sizes must be >= 1".into()));
        }
        let path = self.store.sweep_path(&beams);
        if exists(&path) {
            eprintln!("sweep-beam: reusing {}", path.display());
            print!("{}", std::fs::read_to_string(&path).context(|| format!("reading {}", path.display()))?);
            return Ok(());
        }
        let base_path = self.store.model_path(SystemKind::Base, 0);
        let leca_path = self.store.model_path(SystemKind::Leca, 0);
        require(&base_path, "run `lexcon train` first")?;
        require(&leca_path, "run `lexcon train` first")?;
        let data = self.prepare()?;
        let base = load_checkpoint(&base_path).context(|| format!("reading {}", base_path.display()))?;
        let leca = load_checkpoint(&leca_path).context(|| format!("reading {}", leca_path.display()))?;
        let rows = sweep_beams(&self.cfg, &data, &base, &leca, &beams).context(|| "beam sweep".into())?;
        let csv = sweep_csv(&rows);
        write_atomic(&path, csv.as_bytes())?;
        print!("{csv}");
        eprintln!("sweep-beam: -> {}", path.display());
        Ok(())
    }

    pub fn gradcheck(&self, d_model: usize, n_examples: usize, tolerance: f64) -> CliResult<()> {
        if d_model == 0 || n_examples == 0 {
            return Err(CliError::Config("d_model and examples must be >= 1".into()));
        }
        let data = self.prepare()?;
        let batch = data
            .train
            .iter()
            .take(n_examples)
            .map(|p| make_example(p, &p.constraints, &data.vocab, &self.cfg.sampler))
            .collect::<lexcon_core::Result<Vec<_>>>()
            .context(|| "building examples".into())?;
        let sized = model_config_for(&data.vocab, &self.cfg.sampler, &self.cfg.model);
        let n_heads = if d_model.is_multiple_of(sized.n_heads) { sized.n_heads } else { 1 };
        let mut worst = 0.0f64;
        for use_pointer in [true, false] {
            for use_segments in [true, false] {
                let cfg = ModelConfig {
                    d_model,
                    n_heads,
                    ffn_dim: 2 * d_model,
                    dropout: 0.0,
                    use_pointer,
                    use_segments,
                    ..sized.clone()
                };
                let model = init_model(&cfg, self.cfg.seed).context(|| "initialising model".into())?;
                let report = grad_check(&model, &batch).context(|| "gradient check".into())?;
                println!(
                    "pointer={use_pointer:<5} segments={use_segments:<5} max relative error {:.3e}",
                    report.max_rel_error
                );
                worst = worst.max(report.max_rel_error);
            }
        }
        if worst < tolerance {
            Ok(())
        } else {
            Err(CliError::Check(format!("gradient check failed: {worst:.3e} >= {tolerance:.1e}")))
        }
    }
}

fn results_table(rows: &[SettingReport]) -> String {
    let table: Vec<(String, EvalReport)> = rows.iter().map(|r| (r.label.clone(), r.report.clone())).collect();
    render_table(&table)
}

/// Post-process a decoded JSONL file against its sentence pairs.
pub fn postprocess_file(input: &Path, pairs: &Path, output: &Path) -> CliResult<()> {
    let pairs = read_pairs(pairs).context(|| format!("reading {}", pairs.display()))?;
    let fixed = postprocess_records(&read_records(input)?, &pairs).context(|| "post-processing".into())?;
    write_atomic(output, &jsonl_bytes(&fixed))
}

/// Score a decoded JSONL file against its sentence pairs.
pub fn evaluate_file(input: &Path, pairs: &Path) -> CliResult<()> {
    let pairs = read_pairs(pairs).context(|| format!("reading {}", pairs.display()))?;
    let report = evaluate_records(&read_records(input)?, &pairs).context(|| "scoring".into())?;
    print!("{}", render_table(&[(input.display().to_string(), report)]));
    Ok(())
}
