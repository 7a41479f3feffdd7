//! End-to-end training behavior at small scale: the loss-halving oracle
//! on ~2,000 frames, single-batch overfitting, and exact reproducibility
//! including checkpoint resume.

use lightcone_core::data::{generate, DatasetConfig};
use lightcone_core::pvae::{dataset_tensor, frames_tensor, PVae, PVaeConfig};

fn two_thousand_frames() -> lightcone_core::autodiff::Tensor {
    // 67 sequences x 30 frames = 2,010 frames.
    let ds = generate(&DatasetConfig {
        n_sequences: 67,
        frames_per_seq: 30,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    dataset_tensor(&ds)
}

#[test]
fn smoothed_loss_halves_within_twenty_epochs() {
    let x = two_thousand_frames();
    let mut model = PVae::new(PVaeConfig {
        epochs: 20,
        seed: 3,
        ..Default::default()
    });
    let report = model.train(&x, None, Some(0.5)).unwrap();
    assert!(
        report.halved_at_epoch.is_some(),
        "smoothed loss never reached half of {:.1} in {} epochs (ended at {:.1})",
        report.initial_smoothed,
        report.epochs_run,
        report.final_smoothed
    );
    assert!(report.final_smoothed <= 0.5 * report.initial_smoothed);
}

#[test]
fn single_batch_overfit_reaches_low_pixel_error() {
    // Eight frames, batch size eight -> one step per epoch, 500 steps.
    let ds = generate(&DatasetConfig {
        n_sequences: 2,
        frames_per_seq: 4,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let frames: Vec<_> = ds
        .sequences
        .iter()
        .flat_map(|s| s.frames.iter())
        .collect();
    let x = frames_tensor(&frames);
    let mut model = PVae::new(PVaeConfig {
        epochs: 500,
        batch_size: 8,
        seed: 5,
        ..Default::default()
    });
    model.train(&x, None, None).unwrap();
    let mae = model.reconstruction_mae(&x);
    assert!(mae < 0.05, "overfit MAE {mae}");
}

#[test]
fn identical_seed_and_config_reproduce_the_loss_curve() {
    let ds = generate(&DatasetConfig {
        n_sequences: 8,
        frames_per_seq: 10,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let x = dataset_tensor(&ds);
    let cfg = PVaeConfig {
        epochs: 3,
        batch_size: 16,
        seed: 31,
        ..Default::default()
    };
    let mut m1 = PVae::new(cfg.clone());
    let mut m2 = PVae::new(cfg);
    let r1 = m1.train(&x, None, None).unwrap();
    let r2 = m2.train(&x, None, None).unwrap();
    assert_eq!(r1.curve.len(), r2.curve.len());
    for (a, b) in r1.curve.iter().zip(&r2.curve) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.elbo.to_bits(), b.elbo.to_bits());
        assert_eq!(a.recon.to_bits(), b.recon.to_bits());
        assert_eq!(a.kl.to_bits(), b.kl.to_bits());
    }
}

#[test]
fn resume_continues_the_step_counter() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resume.lcck");
    let ds = generate(&DatasetConfig {
        n_sequences: 4,
        frames_per_seq: 8,
        seed: 14,
        ..Default::default()
    })
    .unwrap();
    let x = dataset_tensor(&ds);
    let cfg = PVaeConfig {
        epochs: 2,
        batch_size: 16,
        seed: 8,
        ..Default::default()
    };
    let steps_per_epoch = (x.rows / cfg.batch_size) as u64;

    let mut model = PVae::new(cfg.clone());
    model.train(&x, None, None).unwrap();
    assert_eq!(model.step_count(), 2 * steps_per_epoch);
    model.save(&path).unwrap();

    let mut resumed = PVae::load(&path).unwrap();
    assert_eq!(resumed.step_count(), 2 * steps_per_epoch);
    let report = resumed.train(&x, None, None).unwrap();
    assert_eq!(resumed.step_count(), 4 * steps_per_epoch);
    assert_eq!(report.curve.first().unwrap().step, 2 * steps_per_epoch + 1);
}
