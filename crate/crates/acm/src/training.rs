//! Training driver: augmentation producers feeding a bounded queue, one
//! optimizer thread, CSV log and periodic checkpoints.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::time::Instant;

use acm_core::density::KernelParams;
use acm_core::policy::classify_counts;
use acm_core::train::{augment, AugmentPolicy, Sample};
use acm_core::{AdamConfig, AttentionConfig, LossReport, ModelBundle, Preset, Trainer, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::dataset::{load_item, Item, Manifest, Split};
use crate::error::{Error, Result};

pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.acm";

/// Everything a run needs after flags and config have been merged.
#[derive(Clone, Debug)]
pub struct TrainPlan {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub preset: Preset,
    pub variant: Variant,
    pub attention: Option<AttentionConfig>,
    pub augment: Option<AugmentPolicy>,
    pub workers: usize,
    pub deterministic: bool,
    pub queue: usize,
    pub seed: u64,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub lambda: f64,
    pub lr: f64,
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub reports: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
    pub attention: AttentionConfig,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_{step:06}.acm")
}

/// Deterministic mode: one producer walks the images in a seeded order.
/// Otherwise each worker owns every `workers`-th image and interleaving is
/// left to the scheduler.
fn produce(
    items: &[Item],
    policy: Option<&AugmentPolicy>,
    worker: usize,
    workers: usize,
    seed: u64,
    tx: SyncSender<Result<Sample>>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (worker as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mine: Vec<usize> = (0..items.len()).filter(|i| i % workers == worker).collect();
    if mine.is_empty() {
        return;
    }
    loop {
        let mut order = mine.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for &i in &order {
            let it = &items[i];
            let sample = Sample {
                image: it.image.clone(),
                density: it.density.clone(),
                roi: it.roi.clone(),
            };
            let batch = match policy {
                Some(p) => augment(&sample, p, &mut rng).map_err(Error::from),
                None => Ok(vec![sample]),
            };
            match batch {
                Ok(batch) => {
                    for s in batch {
                        if tx.send(Ok(s)).is_err() {
                            return;
                        }
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        }
    }
}

pub fn load_training_items(manifest: &Manifest, channels: usize) -> Result<Vec<Item>> {
    let params = KernelParams::default();
    manifest
        .split(Split::Train)
        .map(|e| load_item(manifest, e, channels, &params))
        .collect()
}

/// Trains from scratch and returns every loss report. `on_step` sees each report as it is produced.
pub fn run(plan: &TrainPlan, mut on_step: impl FnMut(&LossReport)) -> Result<TrainSummary> {
    let manifest = Manifest::load(&plan.manifest)?;
    let items = load_training_items(&manifest, plan.channels)?;
    if items.is_empty() {
        return Err(Error::Config(vec![format!(
            "{}: no entries with split \"train\"",
            plan.manifest.display()
        )]));
    }
    let attention = match plan.attention {
        Some(a) => a,
        None => {
            let counts: Vec<usize> = items.iter().map(|i| i.annotation.count()).collect();
            classify_counts(&counts)?.attention
        }
    };
    let bundle = ModelBundle::new(plan.preset, plan.channels, attention, plan.seed)?;
    let mut trainer = Trainer::new(bundle, AdamConfig::default().with_lr(plan.lr), plan.lambda)
        .with_variant(plan.variant);

    std::fs::create_dir_all(&plan.out_dir).map_err(|e| Error::io(&plan.out_dir, e))?;
    let log_path = plan.out_dir.join(LOG_FILE);
    let mut log = csv::Writer::from_path(&log_path).map_err(|e| Error::Csv {
        path: log_path.clone(),
        source: e,
    })?;
    let csv_err = |e: csv::Error| Error::Csv {
        path: log_path.clone(),
        source: e,
    };
    log.write_record(["step", "l_a", "l_b", "l_overall", "wall_ms"]).map_err(csv_err)?;

    let workers = if plan.deterministic { 1 } else { plan.workers.max(1) };
    let mut reports = Vec::with_capacity(plan.steps as usize);
    let mut checkpoints = Vec::new();
    let start = Instant::now();

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx): (SyncSender<Result<Sample>>, Receiver<Result<Sample>>) = sync_channel(plan.queue.max(1));
        for w in 0..workers {
            let tx = tx.clone();
            let items = &items;
            let policy = plan.augment.as_ref();
            let seed = plan.seed;
            scope.spawn(move || produce(items, policy, w, workers, seed, tx));
        }
        drop(tx);
        let result = (|| {
            for _ in 0..plan.steps {
                let sample = rx
                    .recv()
                    .map_err(|_| Error::Config(vec!["augmentation producers stopped".into()]))??;
                let report = trainer.train_step(&sample.image, &sample.density, sample.roi.as_ref())?;
                log.write_record(&[
                    report.step.to_string(),
                    report.l_a.to_string(),
                    report.l_b.to_string(),
                    report.l_overall.to_string(),
                    start.elapsed().as_millis().to_string(),
                ])
                .map_err(csv_err)?;
                on_step(&report);
                reports.push(report);
                if plan.checkpoint_every > 0 && report.step % plan.checkpoint_every == 0 {
                    let p = plan.out_dir.join(checkpoint_name(report.step));
                    checkpoint::save(&p, &trainer.bundle, report.step)?;
                    checkpoints.push(p);
                }
            }
            Ok(())
        })();
        // closing the queue lets blocked producers exit
        drop(rx);
        result
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_path = plan.out_dir.join(FINAL_CHECKPOINT);
    checkpoint::save(&final_path, &trainer.bundle, trainer.steps_done())?;
    checkpoints.push(final_path);
    Ok(TrainSummary {
        reports,
        checkpoints,
        attention,
    })
}

/// Number of data rows in a training log.
pub fn count_log_rows(path: &Path) -> Result<usize> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(r.records().count())
}
