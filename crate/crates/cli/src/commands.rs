use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use tagseq::config::{Manifest, RunConfig};
use tagseq::corpus::{read_corpus, save_corpus, synth_corpus, tag_inventory, FrequencyTable, Side, SynthSpec, Vocab};
use tagseq::error::Error;
use tagseq::eval::{evaluate_corpus, read_predictions, Averaging, EvalOptions};
use tagseq::infer::{generate_corpus, GenerationRecord};
use tagseq::train::{train_with_progress, write_loss_csv, Checkpoint};

use crate::{EvaluateArgs, GenerateArgs, SynthArgs, TrainArgs, VocabArgs};

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e).into())
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthSpec>(&text).with_context(|| format!("reading {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    spec.seed = a.seed;
    if let Some(n) = a.train_docs {
        spec.train_docs = n;
    }
    if let Some(n) = a.dev_docs {
        spec.dev_docs = n;
    }
    if let Some(n) = a.test_docs {
        spec.test_docs = n;
    }
    let corpus = synth_corpus(&spec)?;
    create_dir(&a.out)?;
    save_corpus(&a.out.join("train.jsonl"), &corpus.train)?;
    save_corpus(&a.out.join("dev.jsonl"), &corpus.dev)?;
    save_corpus(&a.out.join("test.jsonl"), &corpus.test)?;
    write_json(&a.out.join("synth_manifest.json"), &corpus.manifest)?;
    eprintln!(
        "wrote {} / {} / {} documents to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        a.out.display()
    );
    Ok(())
}

pub fn build_vocab(a: &VocabArgs) -> anyhow::Result<()> {
    let docs = read_corpus(&a.train)?;
    create_dir(&a.out)?;
    let source = Vocab::build(&docs, Side::Source, a.vocab_cap);
    let target = Vocab::build(&docs, Side::Target, a.vocab_cap);
    write_json(&a.out.join("source_vocab.json"), &source)?;
    write_json(&a.out.join("target_vocab.json"), &target)?;
    write_json(&a.out.join("tag_freq.json"), &FrequencyTable::from_corpus(&docs))?;
    eprintln!("source {} words, target {} words", source.len(), target.len());
    Ok(())
}

pub fn train(a: &TrainArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let train_docs = read_corpus(&a.train)?;
    let dev_docs = match &a.dev {
        Some(p) => read_corpus(p)?,
        None => Vec::new(),
    };
    create_dir(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml()?).map_err(|e| Error::io(a.out.join("config.toml"), e))?;

    let outcome = train_with_progress(&train_docs, &dev_docs, &cfg.model, &cfg.train, |e| match e.dev_loss {
        Some(d) => eprintln!("epoch {:>4}  train {:.5}  dev {:.5}", e.epoch, e.train_loss, d),
        None => eprintln!("epoch {:>4}  train {:.5}", e.epoch, e.train_loss),
    })?;

    let best = a.out.join("model.ckpt");
    let last = a.out.join("last.ckpt");
    let curve = a.out.join("loss.csv");
    outcome.best.save(&best)?;
    outcome.last.save(&last)?;
    let mut w = create_file(&curve)?;
    write_loss_csv(&mut w, &outcome.log).map_err(|e| Error::io(&curve, e))?;
    w.flush().map_err(|e| Error::io(&curve, e))?;

    let mut inputs = vec![a.train.as_path()];
    inputs.extend(a.dev.as_deref());
    Manifest::new("train", cfg, &inputs, &[&best, &last, &curve])?.save(&a.out.join("manifest.json"))?;
    eprintln!("best epoch {} written to {}", outcome.best_epoch, best.display());
    Ok(())
}

pub fn generate(a: &GenerateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let ck = Checkpoint::load(&a.model)?;
    let docs = read_corpus(&a.input)?;
    let gens = generate_corpus(
        &ck.model,
        &ck.source_vocab,
        &ck.target_vocab,
        &docs,
        &cfg.generate,
        cfg.train.deterministic,
    )?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create_file(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let target = a.out.as_deref().unwrap_or(Path::new("<stdout>"));
    for (doc, g) in docs.iter().zip(&gens) {
        let record = GenerationRecord::new(doc, g, a.emit_nbest);
        serde_json::to_writer(&mut out, &record)?;
        writeln!(out).map_err(|e| Error::io(target, e))?;
    }
    out.flush().map_err(|e| Error::io(target, e))?;
    if let Some(p) = &a.out {
        let mut name = p.as_os_str().to_owned();
        name.push(".manifest.json");
        Manifest::new("generate", cfg, &[&a.model, &a.input], &[p])?.save(Path::new(&name))?;
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let predictions = read_predictions(&a.pred)?;
    let gold = read_corpus(&a.gold)?;
    let inventory = match (&a.model, &a.train) {
        (Some(m), _) => Checkpoint::load(m)?.inventory(),
        (None, Some(t)) => tag_inventory(&read_corpus(t)?),
        (None, None) => unreachable!("clap requires one inventory source"),
    };
    let opts = EvalOptions {
        averaging: if a.macro_average {
            Averaging::Macro
        } else {
            Averaging::Micro
        },
        sequential: a.deterministic,
    };
    let report = evaluate_corpus(&predictions, &gold, &inventory, opts)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("report.json"), &report)?;
        fs::write(dir.join("report.txt"), &table).map_err(|e| Error::io(dir.join("report.txt"), e))?;
        let csv = dir.join("per_document.csv");
        let mut w = create_file(&csv)?;
        report.write_csv(&mut w).map_err(|e| Error::io(&csv, e))?;
        w.flush().map_err(|e| Error::io(&csv, e))?;
    }
    Ok(())
}
