use std::time::Instant;

use convcode::convcom::{evaluate_pretrain, pretrain, PretrainSchedule};
use convcode::encoder::{Capacity, CodeModel};
use convcode::kernel::SeedRng;
use convcode::synth::{topical_corpus, TopicalCorpusConfig};

#[test]
#[ignore]
fn run_default_pretraining_experiment() {
    let cfg = TopicalCorpusConfig::default();
    let corpus = topical_corpus(&cfg, 42).unwrap();
    let model = CodeModel::init(
        Capacity::Small,
        corpus.vocab.clone(),
        32,
        false,
        &SeedRng::new(7),
    )
    .unwrap();
    let schedule = PretrainSchedule::default();
    let t0 = Instant::now();
    let out = pretrain(model, &corpus, &schedule, 9).unwrap();
    for r in &out.log {
        eprintln!(
            "epoch {} loss {:.4} val_r11@1 {:.4} lr {:.2e}",
            r.epoch, r.train_loss, r.validation_recall, r.learning_rate
        );
    }
    eprintln!("pretrain wall: {:?}", t0.elapsed());
    let val = evaluate_pretrain(&out.model, &corpus.validation).unwrap();
    eprintln!("best-val metrics: {:?}", val);
    let test = evaluate_pretrain(&out.model, &corpus.test).unwrap();
    eprintln!("test metrics: {:?}", test);
    out.model
        .checkpoint(Vec::new())
        .save(std::path::Path::new("/tmp/exp_model.ckpt"))
        .unwrap();
    eprintln!("saved /tmp/exp_model.ckpt");
}
