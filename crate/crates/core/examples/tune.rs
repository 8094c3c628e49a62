// Scratch experiment: full synth -> train -> retrieve -> eval on the toy
// benchmark, printing the with-thought vs query-only gap for hyperparameter
// tuning. Not part of the deliverable surface.

use std::time::Instant;

use mull_core::config::RunConfig;
use mull_core::corpus::{read_jsonl, Corpus, QDocPair, Query};
use mull_core::evalkit::{mrr_at_k, QrelSet};
use mull_core::model::{init_params, Optimizer, OptimizerState, SamplingConfig, TrainState};
use mull_core::pipeline::{embed_corpus, run_retrieval, EmbedOptions, RetrievalMode};
use mull_core::synthesis::{build_dataset, load_triplets, SynthesisJob};
use mull_core::textproc::{PromptTemplate, Vocab};
use mull_core::trainer::train;

fn main() {
    let t0 = Instant::now();
    let assets = std::path::Path::new("assets/toy");
    let mut cfg = RunConfig::load(&assets.join("toy.conf")).unwrap();
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    cfg.apply_overrides(&overrides).unwrap();

    let corpus = Corpus::load(&cfg.existing_path("corpus").unwrap()).unwrap();
    let pairs: Vec<QDocPair> = read_jsonl(&cfg.existing_path("pairs").unwrap()).unwrap();
    let queries: Vec<Query> = read_jsonl(&cfg.existing_path("queries").unwrap()).unwrap();
    let qrels = QrelSet::load(&cfg.existing_path("qrels").unwrap()).unwrap();
    let vocab = Vocab::load(&cfg.existing_path("vocab").unwrap()).unwrap();
    let limits = cfg.limits().unwrap();

    // Synthesis.
    let tmp = tempfile::tempdir().unwrap();
    let generator = cfg.generator().unwrap();
    let members = cfg.committee().unwrap();
    let template = PromptTemplate::new(cfg.usize_or("m_examples", 3).unwrap());
    let tc = cfg.train_config().unwrap();
    let job = SynthesisJob {
        pairs: &pairs,
        corpus: &corpus,
        generator: &generator,
        members: &members,
        template: &template,
        vocab: &vocab,
        limits,
        k_candidates: cfg.usize_or("k_candidates", 4).unwrap(),
        n_hard_negatives: tc.n_hard_negatives,
        hard_negative_member: Some("emb"),
        seed: tc.seed,
    };
    let tpath = tmp.path().join("triplets.jsonl");
    let vpath = tmp.path().join("votes.jsonl");
    let summary = build_dataset(&job, &tpath, &vpath).unwrap();
    println!("synth: {} triplets in {:?}", summary.written, t0.elapsed());
    let triplets = load_triplets(&tpath, &corpus).unwrap();

    let run_training = |lambda: f64| {
        let t = Instant::now();
        let mcfg = cfg.model_config(vocab.len()).unwrap();
        let mut params = init_params(&mcfg, mcfg.seed).unwrap();
        let tcfg = mull_core::model::TrainConfig { lambda, ..tc.clone() };
        let mut state = TrainState {
            step: 0,
            optimizer: OptimizerState::new(Optimizer::parse(&tcfg.optimizer).unwrap(), &params),
        };
        let outcome = train(
            &mut params, &triplets, &corpus, &vocab, &limits, &tcfg, &mut state, |step, loss| {
                if step % 200 == 0 {
                    eprintln!("  step {step}: joint {:.4} gen {:.4} ctr {:.4}", loss.joint, loss.gen, loss.ctr);
                }
            },
        )
        .unwrap();
        println!(
            "train lambda={lambda}: {} steps, loss {:.4} -> {:.4} in {:?}",
            outcome.steps_run,
            outcome.first_loss.unwrap().joint,
            outcome.final_loss.unwrap().joint,
            t.elapsed()
        );
        params
    };

    let eval = |params: &mull_core::model::ModelParams, label: &str| {
        let opts = EmbedOptions {
            normalize: tc.normalize,
            limits,
            max_thought_tokens: tc.max_thought_tokens,
            seed: tc.seed,
        };
        let store = embed_corpus(params, &vocab, corpus.docs(), &opts).unwrap();
        let n = cfg.usize_or("top_n", 100).unwrap();
        let wt = run_retrieval(
            params,
            &vocab,
            &store,
            &queries,
            &RetrievalMode::WithThought {
                k: tc.k_thoughts,
                sampling: SamplingConfig {
                    greedy: false,
                    temperature: cfg.f64_or("sample_temperature", 1.0).unwrap(),
                },
            },
            n,
            "wt",
            &opts,
        )
        .unwrap();
        let qo = run_retrieval(
            params, &vocab, &store, &queries, &RetrievalMode::QueryOnly, n, "qo", &opts,
        )
        .unwrap();
        let mrr_wt = mrr_at_k(&wt, &qrels, 10).mean;
        let mrr_qo = mrr_at_k(&qo, &qrels, 10).mean;
        println!(
            "{label}: with-thought MRR@10 {:.4}  query-only MRR@10 {:.4}  gap {:+.4}",
            mrr_wt,
            mrr_qo,
            mrr_wt - mrr_qo
        );
        (mrr_wt, mrr_qo)
    };

    let joint = run_training(tc.lambda);
    let (wt, qo) = eval(&joint, "joint");
    let ctr_only = run_training(0.0);
    let (_, qo_base) = eval(&ctr_only, "ctr-only");
    println!(
        "gap {:+.4} (need >= +0.05); qo degradation {:+.4} (need >= -0.02); total {:?}",
        wt - qo,
        qo - qo_base,
        t0.elapsed()
    );
}
