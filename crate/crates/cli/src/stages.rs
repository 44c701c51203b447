use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use selkd::align::{em_train_corpus, AlignConfig};
use selkd::corpus::{load_corpus_with, Corpus, Side, TargetSide};
use selkd::curriculum::{
    decisions_tsv, raw_ratio, select_for_update, train_on_side, update_log_tsv, Choice, StudentConfig,
    ThresholdSchedule,
};
use selkd::metrics::{corpus_bleu, metric_report, repetition_ratio, sweep_tsv, threshold_sweep, token_accuracy, View};
use selkd::nat::checkpoint;
use selkd::nat::{decode_greedy, train_with_snapshot};
use selkd::scoring::{score_corpus, ScoreOptions, ScoreTable};
use selkd::synth::{oracle_report, SynthTask};

use crate::args::*;
use crate::manifest::{FileDigest, Manifest, StageRun};
use crate::Failure;

fn lines_bytes<S: AsRef<str>>(lines: &[S]) -> Vec<u8> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    out.into_bytes()
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut b = serde_json::to_vec_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    b.push(b'\n');
    Ok(b)
}

fn text(bytes: Vec<u8>, path: &Path) -> Result<String, Failure> {
    String::from_utf8(bytes).map_err(|_| Failure::Data(format!("{}: not UTF-8", path.display())))
}

/// Runs `body`, then writes the manifest; on failure the stage's outputs are removed.
fn staged<A: Serialize, R>(
    stage: &str,
    tag: &str,
    common: &Common,
    args: &A,
    body: impl FnOnce(&mut StageRun) -> Result<R, Failure>,
) -> Result<(R, Vec<FileDigest>), Failure> {
    let mut run = StageRun::new(stage, tag, common)?;
    match body(&mut run) {
        Ok(r) => {
            let outputs = run.finish(args)?;
            log::info!("{stage}: wrote {} files to {}", outputs.len(), common.out.display());
            Ok((r, outputs))
        }
        Err(e) => {
            run.abandon();
            Err(e)
        }
    }
}

fn load_corpus(run: &mut StageRun, c: &CorpusArgs) -> Result<Corpus, Failure> {
    for p in c.paths() {
        run.input(&p)?;
    }
    Ok(load_corpus_with(&c.src, &c.raw, &c.kd, c.vocab_mode())?)
}

fn load_scores(run: &mut StageRun, path: &Path) -> Result<ScoreTable, Failure> {
    let body = text(run.input(path)?, path)?;
    Ok(ScoreTable::from_tsv(&body, path)?)
}

fn load_checkpoint(run: &mut StageRun, path: &Path) -> Result<selkd::nat::NatModel, Failure> {
    Ok(checkpoint::from_bytes(&run.input(path)?)?)
}

pub fn synth(common: &Common, a: &SynthArgs) -> Result<Vec<FileDigest>, Failure> {
    staged("synth", "synth", common, a, |run| {
        let task = SynthTask::new(a.spec())?;
        let synth = task.sample(a.n, common.seed)?;
        let c = &synth.corpus;
        run.write("train.src", &lines_bytes(&c.side_lines(Side::Source)))?;
        run.write("train.raw", &lines_bytes(&c.side_lines(Side::Raw)))?;
        run.write("train.kd", &lines_bytes(&c.side_lines(Side::Distilled)))?;
        run.write("synth.tsv", synth.sidecar_tsv().as_bytes())?;
        run.write("oracle.json", &json_bytes(&oracle_report(&synth))?)?;
        if a.heldout > 0 {
            let held = task.heldout(a.heldout, common.seed);
            let src: Vec<String> = held.iter().map(|(s, _)| s.join(" ")).collect();
            let refs: Vec<String> = held.iter().map(|(_, r)| r.join(" ")).collect();
            run.write("test.src", &lines_bytes(&src))?;
            run.write("test.ref", &lines_bytes(&refs))?;
        }
        Ok(())
    })
    .map(|r| r.1)
}

pub fn train_evaluator(common: &Common, a: &TrainEvaluatorArgs) -> Result<Vec<FileDigest>, Failure> {
    staged("train-evaluator", "train-evaluator", common, a, |run| {
        let corpus = load_corpus(run, &a.corpus)?;
        let config = a.model.config(common.seed);
        config.validate()?;
        let updates = config.epochs * corpus.len().div_ceil(config.batch_size);
        let snapshot_at = a.snapshot_at.unwrap_or(updates.div_ceil(12));
        let out = train_with_snapshot(&corpus, TargetSide::Raw, &config, Some(snapshot_at))?;
        run.write("evaluator.ckpt.json", &checkpoint::to_bytes(&out.model))?;
        if let Some(snap) = &out.snapshot {
            run.write("evaluator.init.ckpt.json", &checkpoint::to_bytes(snap))?;
        }
        let mut log = String::from("epoch\tmean_loss\tskipped\n");
        for e in &out.epochs {
            writeln!(log, "{}\t{:.6}\t{}", e.epoch, e.mean_loss, e.skipped).unwrap();
        }
        run.write("evaluator.log.tsv", log.as_bytes())?;
        Ok(())
    })
    .map(|r| r.1)
}

pub fn score(common: &Common, a: &ScoreArgs) -> Result<Vec<FileDigest>, Failure> {
    staged("score", "score", common, a, |run| {
        let corpus = load_corpus(run, &a.corpus)?;
        let model = load_checkpoint(run, &a.checkpoint)?;
        let opts = ScoreOptions {
            variant: a.variant.into(),
            normalizer: a.normalizer.into(),
            threads: common.threads,
        };
        let table = score_corpus(&model, &corpus, &opts)?;
        run.write("scores.tsv", table.to_tsv().as_bytes())?;
        let probs = [0.1, 0.25, 0.5, 0.75, 0.9];
        let q = table.quantiles(&probs);
        let shown: Vec<String> = probs.iter().zip(&q).map(|(p, v)| format!("q{p}={v:.3}")).collect();
        println!("score quantiles: {}", shown.join(" "));
        Ok(())
    })
    .map(|r| r.1)
}

fn schedule_of(s: &ScheduleArgs) -> Result<ThresholdSchedule, Failure> {
    Ok(match s.fixed_threshold {
        Some(t) => ThresholdSchedule::fixed(t, s.updates)?,
        None => ThresholdSchedule::linear(s.t0, s.t1, s.updates)?,
    })
}

pub fn select(common: &Common, a: &SelectArgs) -> Result<Vec<FileDigest>, Failure> {
    staged("select", "select", common, a, |run| {
        let corpus = load_corpus(run, &a.corpus)?;
        let scores = load_scores(run, &a.scores)?;
        let schedule = schedule_of(&a.schedule)?;
        let t = schedule.threshold_at(a.update)?;
        let decisions = select_for_update(&scores, &corpus, t)?;
        // copy the input lines verbatim rather than re-rendering tokens
        let src = text(run.input(&a.corpus.src)?, &a.corpus.src)?;
        let raw = text(run.input(&a.corpus.raw)?, &a.corpus.raw)?;
        let kd = text(run.input(&a.corpus.kd)?, &a.corpus.kd)?;
        let (raw, kd): (Vec<&str>, Vec<&str>) = (raw.lines().collect(), kd.lines().collect());
        let chosen: Vec<&str> = decisions
            .iter()
            .map(|d| match d.choice {
                Choice::Raw => raw[d.index],
                Choice::Kd => kd[d.index],
            })
            .collect();
        run.write("selected.src", &lines_bytes(&src.lines().collect::<Vec<_>>()))?;
        run.write("selected.tgt", &lines_bytes(&chosen))?;
        run.write("decisions.tsv", decisions_tsv(&decisions).as_bytes())?;
        println!(
            "threshold {t:.4}: {} of {} raw targets kept",
            decisions.iter().filter(|d| d.choice == Choice::Raw).count(),
            decisions.len()
        );
        Ok(())
    })
    .map(|r| r.1)
}

pub fn train_student(common: &Common, a: &TrainStudentArgs) -> Result<Vec<FileDigest>, Failure> {
    staged("train-student", &a.name, common, a, |run| {
        let corpus = load_corpus(run, &a.corpus)?;
        let init = match &a.init {
            Some(p) => Some(load_checkpoint(run, p)?),
            None => None,
        };
        let config = StudentConfig {
            model: a.model.config(common.seed),
            updates: a.schedule.updates,
            log_every: a.log_every,
        };
        let out = match a.baseline {
            Some(side) => train_on_side(&corpus, side.into(), &config, init.as_ref())?,
            None => {
                let path = a
                    .scores
                    .as_ref()
                    .ok_or_else(|| Failure::Usage("--scores is required unless --baseline is given".into()))?;
                let scores = load_scores(run, path)?;
                let schedule = schedule_of(&a.schedule)?;
                selkd::curriculum::train_student(&corpus, &scores, &schedule, &config, init.as_ref())?
            }
        };
        run.write(&format!("{}.ckpt.json", a.name), &checkpoint::to_bytes(&out.model))?;
        run.write(&format!("{}.log.tsv", a.name), update_log_tsv(&out.log).as_bytes())?;
        Ok(())
    })
    .map(|r| r.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub name: String,
    pub sentences: usize,
    pub bleu: f64,
    pub token_accuracy: f64,
    pub repetition_per_mille: f64,
    pub reference_repetition_per_mille: f64,
    pub empty_outputs: usize,
}

pub fn decode(common: &Common, a: &DecodeArgs) -> Result<Vec<FileDigest>, Failure> {
    staged("decode", &a.name, common, a, |run| {
        let model = load_checkpoint(run, &a.checkpoint)?;
        let input = text(run.input(&a.input)?, &a.input)?;
        let hyps: Vec<String> = input
            .lines()
            .map(|line| {
                let ids = model.source_vocab().encode(line);
                if ids.is_empty() {
                    return String::new();
                }
                model.target_vocab().decode(&decode_greedy(&model.forward(&ids)).output)
            })
            .collect();
        run.write(&format!("{}.hyp", a.name), &lines_bytes(&hyps))?;
        if let Some(rpath) = &a.reference {
            let refs = text(run.input(rpath)?, rpath)?;
            let refs: Vec<Vec<&str>> = refs.lines().map(|l| l.split_whitespace().collect()).collect();
            if refs.len() != hyps.len() {
                return Err(selkd::Error::LineCountMismatch {
                    left: a.input.clone(),
                    left_count: hyps.len(),
                    right: rpath.clone(),
                    right_count: refs.len(),
                }
                .into());
            }
            let toks: Vec<Vec<&str>> = hyps.iter().map(|h| h.split_whitespace().collect()).collect();
            let eval = Evaluation {
                name: a.name.clone(),
                sentences: hyps.len(),
                bleu: corpus_bleu(&toks, &refs)?,
                token_accuracy: token_accuracy(&toks, &refs),
                repetition_per_mille: repetition_ratio(&toks),
                reference_repetition_per_mille: repetition_ratio(&refs),
                empty_outputs: toks.iter().filter(|t| t.is_empty()).count(),
            };
            run.write(&format!("{}.eval.json", a.name), &json_bytes(&eval)?)?;
            println!(
                "{}: BLEU {:.2}, token accuracy {:.4}, repetition {:.2}‰",
                eval.name, eval.bleu, eval.token_accuracy, eval.repetition_per_mille
            );
        }
        Ok(())
    })
    .map(|r| r.1)
}

pub fn metrics(common: &Common, a: &MetricsArgs) -> Result<Vec<FileDigest>, Failure> {
    staged("metrics", "metrics", common, a, |run| {
        let corpus = load_corpus(run, &a.corpus)?;
        let scores = load_scores(run, &a.scores)?;
        scores.check_covers(corpus.len())?;
        let config = AlignConfig {
            iterations: a.align_iterations,
            tension: a.tension,
            p0: a.p0,
            threads: common.threads,
        };
        let model = em_train_corpus(&corpus, &[TargetSide::Raw, TargetSide::Distilled], &config)?;
        let rows = threshold_sweep(&corpus, &scores, &model, &a.thresholds, common.threads)?;
        run.write("metrics.tsv", sweep_tsv(&rows).as_bytes())?;
        let schedule = ThresholdSchedule::linear(a.t0, a.t1, 1)?;
        let raw = View::side(&corpus, TargetSide::Raw);
        let kd = View::side(&corpus, TargetSide::Distilled);
        let reports = vec![
            metric_report(&raw, &model, Some((&scores, &schedule)), common.threads)?,
            metric_report(&kd, &model, None, common.threads)?,
        ];
        #[derive(Serialize)]
        struct Out<'a> {
            alignment_log_likelihood: &'a [f64],
            views: Vec<selkd::metrics::MetricReport>,
            sweep: &'a [selkd::metrics::ThresholdRow],
        }
        let out = Out {
            alignment_log_likelihood: model.log_likelihood_trace(),
            views: reports,
            sweep: &rows,
        };
        run.write("metrics.json", &json_bytes(&out)?)?;
        if a.pharaoh {
            let links = model.align_all(&raw.pairs, common.threads);
            run.write("alignments.raw.txt", selkd::align::pharaoh_dump(&links).as_bytes())?;
        }
        print!("{}", sweep_tsv(&rows));
        Ok(())
    })
    .map(|r| r.1)
}

fn read_optional(run: &mut StageRun, path: &Path) -> Result<Option<String>, Failure> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(text(run.input(path)?, path)?))
}

pub fn report(common: &Common, a: &ReportArgs) -> Result<Vec<FileDigest>, Failure> {
    staged("report", "report", common, a, |run| {
        let dir = run.out().to_owned();
        let mut md = String::from("# selkd run summary\n\n");

        let mut manifests: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Failure::Internal(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("manifest.") && n.ends_with(".json") && n != "manifest.report.json" && n != "manifest.full.json")
            })
            .collect();
        manifests.sort();
        md.push_str("## Stages\n\n| manifest | stage | outputs |\n|---|---|---|\n");
        for m in &manifests {
            let body = text(run.input(m)?, m)?;
            let man: Manifest =
                serde_json::from_str(&body).map_err(|e| Failure::Data(format!("{}: {e}", m.display())))?;
            let outs: Vec<String> = man.outputs.iter().map(|d| d.path.display().to_string()).collect();
            writeln!(md, "| {} | {} | {} |", m.file_name().unwrap().to_string_lossy(), man.stage, outs.join(", ")).unwrap();
        }

        if let Some(body) = read_optional(run, &dir.join("oracle.json"))? {
            let o: selkd::synth::OracleReport =
                serde_json::from_str(&body).map_err(|e| Failure::Data(format!("oracle.json: {e}")))?;
            writeln!(
                md,
                "\n## Corpus\n\n{} examples; mode counts {:?}; {} distilled targets with a teacher mistake; \
                 {:.1}% of raw targets are worth keeping.",
                o.examples,
                o.mode_counts,
                o.mistake_count,
                100.0 * o.should_select_fraction()
            )
            .unwrap();
        }

        if let Some(body) = read_optional(run, &dir.join("evaluator.log.tsv"))? {
            if let Some(last) = body.lines().last() {
                writeln!(md, "\n## Evaluator\n\nlast epoch (epoch, mean loss, skipped): `{last}`").unwrap();
            }
        }

        let scores_path = dir.join("scores.tsv");
        if let Some(body) = read_optional(run, &scores_path)? {
            let table = ScoreTable::from_tsv(&body, &scores_path)?;
            md.push_str("\n## Scores\n\n| T | raw ratio |\n|---|---|\n");
            for t in [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.01] {
                writeln!(md, "| {t:.2} | {:.3} |", raw_ratio(&table, t)).unwrap();
            }
            let q = table.quantiles(&[0.1, 0.25, 0.5, 0.75, 0.9]);
            writeln!(md, "\nquantiles 10/25/50/75/90%: {q:.3?}").unwrap();
        }

        if let Some(body) = read_optional(run, &dir.join("metrics.tsv"))? {
            md.push_str("\n## Complexity by threshold\n\n```\n");
            md.push_str(&body);
            md.push_str("```\n");
        }

        let mut evals: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Failure::Internal(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".eval.json"))
            .collect();
        evals.sort();
        if !evals.is_empty() {
            md.push_str("\n## Students on held-out sources\n\n| model | BLEU | token accuracy | repetition ‰ | reference repetition ‰ |\n|---|---|---|---|---|\n");
            for p in evals {
                let body = text(run.input(&p)?, &p)?;
                let e: Evaluation =
                    serde_json::from_str(&body).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
                writeln!(
                    md,
                    "| {} | {:.2} | {:.4} | {:.2} | {:.2} |",
                    e.name, e.bleu, e.token_accuracy, e.repetition_per_mille, e.reference_repetition_per_mille
                )
                .unwrap();
            }
        }
        run.write("report.md", md.as_bytes())?;
        Ok(())
    })
    .map(|r| r.1)
}

pub fn full(common: &Common, a: &FullArgs) -> Result<Vec<FileDigest>, Failure> {
    staged("full", "full", common, a, |run| {
        let out = common.out.clone();
        let corpus = CorpusArgs::in_dir(&out);
        let mut absorb = |d: Vec<FileDigest>| run.absorb(&d);

        absorb(synth(common, &a.synth)?);
        absorb(train_evaluator(
            common,
            &TrainEvaluatorArgs {
                corpus: corpus.clone(),
                model: a.model.clone(),
                snapshot_at: None,
            },
        )?);
        absorb(score(
            common,
            &ScoreArgs {
                corpus: corpus.clone(),
                checkpoint: out.join("evaluator.ckpt.json"),
                variant: VariantArg::Ctc,
                normalizer: NormalizerArg::Frames,
            },
        )?);
        let schedule = ScheduleArgs {
            t0: a.t0,
            t1: a.t1,
            updates: a.updates,
            fixed_threshold: None,
        };
        absorb(select(
            common,
            &SelectArgs {
                corpus: corpus.clone(),
                scores: out.join("scores.tsv"),
                schedule: schedule.clone(),
                update: a.updates / 2,
            },
        )?);
        let mut students = vec![("student", None)];
        if !a.no_baselines {
            students.push(("student-raw", Some(Baseline::Raw)));
            students.push(("student-kd", Some(Baseline::Kd)));
        }
        for (name, baseline) in students {
            absorb(train_student(
                common,
                &TrainStudentArgs {
                    corpus: corpus.clone(),
                    scores: baseline.is_none().then(|| out.join("scores.tsv")),
                    schedule: schedule.clone(),
                    baseline,
                    init: Some(out.join("evaluator.init.ckpt.json")),
                    model: a.model.clone(),
                    log_every: 1,
                    name: name.to_owned(),
                },
            )?);
            if a.synth.heldout > 0 {
                absorb(decode(
                    common,
                    &DecodeArgs {
                        checkpoint: out.join(format!("{name}.ckpt.json")),
                        input: out.join("test.src"),
                        reference: Some(out.join("test.ref")),
                        name: name.to_owned(),
                    },
                )?);
            }
        }
        absorb(metrics(
            common,
            &MetricsArgs {
                corpus,
                scores: out.join("scores.tsv"),
                thresholds: vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.01],
                align_iterations: 5,
                tension: 4.0,
                p0: 0.08,
                pharaoh: false,
                t0: a.t0,
                t1: a.t1,
            },
        )?);
        absorb(report(common, &ReportArgs {})?);
        Ok(())
    })
    .map(|r| r.1)
}

fn parse_args<T: for<'de> Deserialize<'de>>(m: &Manifest) -> Result<T, Failure> {
    serde_json::from_value(m.args.clone()).map_err(|e| Failure::Data(format!("manifest arguments: {e}")))
}

/// Checks the recorded inputs, then runs the stage again with the recorded flags.
pub fn rerun(a: &RerunArgs) -> Result<(), Failure> {
    let m = Manifest::read(&a.manifest)?;
    if m.tool != crate::manifest::TOOL {
        return Err(Failure::Data(format!("{} was not written by selkd", a.manifest.display())));
    }
    for d in &m.inputs {
        let bytes = crate::manifest::read_input(&d.path)?;
        if crate::manifest::sha256_hex(&bytes) != d.sha256 {
            return Err(Failure::Checksum {
                path: d.path.clone(),
                manifest: a.manifest.clone(),
            });
        }
    }
    let mut common = m.common.clone();
    if let Some(dir) = &a.into {
        common.out = dir.clone();
    }
    match m.stage.as_str() {
        "synth" => synth(&common, &parse_args(&m)?).map(drop),
        "train-evaluator" => train_evaluator(&common, &parse_args(&m)?).map(drop),
        "score" => score(&common, &parse_args(&m)?).map(drop),
        "select" => select(&common, &parse_args(&m)?).map(drop),
        "train-student" => train_student(&common, &parse_args(&m)?).map(drop),
        "decode" => decode(&common, &parse_args(&m)?).map(drop),
        "metrics" => metrics(&common, &parse_args(&m)?).map(drop),
        "report" => report(&common, &parse_args(&m)?).map(drop),
        "full" => full(&common, &parse_args(&m)?).map(drop),
        other => Err(Failure::Data(format!("unknown stage {other:?} in manifest"))),
    }
}
