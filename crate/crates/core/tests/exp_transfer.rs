use std::time::Instant;

use convcode::encoder::Capacity;
use convcode::erc::{
    dataset_from_records, finetune, paired_t_test, FinetuneJob, FinetuneSchedule, TransferVariant,
};
use convcode::kernel::Checkpoint;
use convcode::synth::{synthetic_erc_records, SyntheticErcConfig};

#[test]
#[ignore]
fn run_transfer_experiment() {
    let ck = Checkpoint::load(std::path::Path::new("/tmp/exp_model.ckpt")).unwrap();
    let cfg = SyntheticErcConfig::default();
    let dataset = dataset_from_records(&synthetic_erc_records(&cfg, 77)).unwrap();
    let counts = dataset.label_counts(&dataset.conversations);
    eprintln!("labels {:?} counts {:?}", dataset.labels, counts);

    let schedule = FinetuneSchedule {
        repeats: 5,
        max_epochs: 10,
        try_half_rate: false,
        ..FinetuneSchedule::default()
    };
    let job = |variant, checkpoint| FinetuneJob {
        dataset: &dataset,
        variant,
        checkpoint,
        capacity: Capacity::Small,
        emb_dim: 32,
        schedule: schedule.clone(),
        seed: 55,
    };

    let t0 = Instant::now();
    let full = finetune(&job(TransferVariant::Full, Some(&ck))).unwrap();
    eprintln!("full done in {:?}", t0.elapsed());
    let t1 = Instant::now();
    let none = finetune(&job(TransferVariant::None, None)).unwrap();
    eprintln!("none done in {:?}", t1.elapsed());

    eprintln!(
        "macro-f1 full {:?} mean {:.4}",
        full.macro_f1_samples(),
        full.mean_macro_f1()
    );
    eprintln!(
        "macro-f1 none {:?} mean {:.4}",
        none.macro_f1_samples(),
        none.mean_macro_f1()
    );
    let (t, p) = paired_t_test(&full.macro_f1_samples(), &none.macro_f1_samples()).unwrap();
    eprintln!("paired t {t:.4} p {p:.6}");
    let f_class = full.mean_per_class_f1();
    let n_class = none.mean_per_class_f1();
    for (i, label) in dataset.labels.iter().enumerate() {
        eprintln!(
            "class {label}: full {:.4} none {:.4} margin {:+.4} (count {})",
            f_class[i],
            n_class[i],
            f_class[i] - n_class[i],
            counts[i]
        );
    }
    eprintln!("total wall {:?}", t0.elapsed());
}
