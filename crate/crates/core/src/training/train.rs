use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, ShadingFeatures};
use super::losses::{mask_loss, perceptual_loss, rgb_loss, LossParts, PerceptualExtractor};
use super::metrics::{metrics, Metrics};
use super::model::{posed_template, HandModel};
use super::{Dataset, FrameSample};
use crate::appearance::compose_color;
use crate::autodiff::{Adam, ParamStore, Tape, Tensor, Var};
use crate::geometry::{normalize_gradient, regularization_loss, regularization_terms, sample_omega};
use crate::linalg::Vec3;
use crate::renderer::{dilate, mark_visibility, project_var, rasterize_var, screen_from_tensor, silhouette, DILATION_PX};
use crate::rig::{deform_normals_var, deform_points_var, deformation_jacobian_inverse, forward_kinematics, template_normal_deformation};
use crate::{Error, Real, Result};

const POINTS: &str = "points";

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: usize,
    pub loss_rgb: f64,
    pub loss_vgg: f64,
    pub loss_mask: f64,
    pub loss_reg: f64,
    pub loss_total: f64,
    pub lambda_rgb: f64,
    pub lambda_vgg: f64,
    pub lambda_mask: f64,
    pub lambda_reg: f64,
    pub lambda_sdf: f64,
    pub lambda_eik: f64,
    pub num_points: usize,
    pub radius: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub iou: Option<f64>,
    pub ms_per_frame: f64,
}

pub fn write_log(path: &Path, rows: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

struct Forward {
    loss: Var,
    parts: LossParts,
    /// Per-point visibility of every frame, when geometry is trainable.
    visible: Vec<Vec<bool>>,
}

/// Optimizer state and schedule around a [`HandModel`].
pub struct Trainer<T: Real> {
    pub model: HandModel<T>,
    pub config: RunConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub log: Vec<EpochLog>,
    adam: Adam<T>,
    extractor: PerceptualExtractor<T>,
    rng: ChaCha8Rng,
    points: ParamStore<T>,
    /// SDF normals of the frozen canonical points.
    frozen_normals: Option<Vec<Vec3<T>>>,
    total_steps: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(mut model: HandModel<T>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        model.config.shading_features = config.train.shading_features;
        let rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        Ok(Self {
            model,
            config,
            epoch: 0,
            step: 0,
            log: Vec::new(),
            adam: Adam::default(),
            extractor: PerceptualExtractor::default(),
            rng,
            points: ParamStore::new(),
            frozen_normals: None,
            total_steps: 0,
        })
    }

    fn geometry_trainable(&self) -> bool {
        self.config.train.geometry_trainable(self.epoch + 1)
    }

    /// Batches of training-frame indices for one epoch.
    fn batches(&mut self, frames: &[FrameSample<T>]) -> Vec<Vec<usize>> {
        if self.config.train.batch_by_pose {
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for (i, f) in frames.iter().enumerate() {
                match groups.iter_mut().find(|g| frames[g[0]].pose == f.pose) {
                    Some(g) => g.push(i),
                    None => groups.push(vec![i]),
                }
            }
            groups.shuffle(&mut self.rng);
            groups
        } else {
            let mut order: Vec<usize> = (0..frames.len()).collect();
            order.shuffle(&mut self.rng);
            order.chunks(self.config.train.batch_size).map(<[usize]>::to_vec).collect()
        }
    }

    fn batches_per_epoch(&self, frames: &[FrameSample<T>]) -> usize {
        if self.config.train.batch_by_pose {
            let mut poses: Vec<&_> = Vec::new();
            for f in frames {
                if !poses.contains(&&f.pose) {
                    poses.push(&f.pose);
                }
            }
            poses.len()
        } else {
            frames.len().div_ceil(self.config.train.batch_size)
        }
    }

    /// Records the loss of `batch` on `tape`. Frames sharing a pose share
    /// the deformation and shading evaluation.
    fn forward(&mut self, tape: &mut Tape<T>, batch: &[&FrameSample<T>], omega_rng: &mut ChaCha8Rng) -> Result<Forward> {
        let w = self.config.loss.clone();
        let lit = T::lit;
        let geometry = self.geometry_trainable();
        let model = &mut self.model;
        let n = model.points.len();

        self.points.insert(POINTS, Tensor::from_vec3s(&model.points.coords));
        let (pts, normals, reg) = if geometry {
            let pts = self.points.bind(tape, POINTS)?;
            let sv = model.sdf.bind(tape)?;
            let omega = sample_omega(&model.points.coords, model.points.radius, omega_rng);
            let terms = regularization_terms(tape, &model.sdf, &sv, pts, &omega)?;
            let reg = regularization_loss(tape, &terms, lit(w.lambda_sdf), lit(w.lambda_eik))?;
            let (normals, _) = normalize_gradient(tape, terms.point_gradient)?;
            (pts, normals, Some(reg))
        } else {
            let pts = tape.constant(Tensor::from_vec3s(&model.points.coords))?;
            if self.frozen_normals.is_none() {
                self.frozen_normals = Some(model.canonical_normals()?.0);
            }
            let normals = tape.constant(Tensor::from_vec3s(self.frozen_normals.as_ref().expect("cached above")))?;
            (pts, normals, None)
        };

        let keys = tape.constant(Tensor::from_vec3s(&model.rig.vertices))?;
        let av = model.appearance.albedo.bind(tape)?;
        let albedo = model.appearance.albedo.forward(tape, &av, pts, keys)?;
        let sv = model.appearance.shading.bind(tape)?;

        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, f) in batch.iter().enumerate() {
            match groups.iter_mut().find(|g| batch[g[0]].pose == f.pose) {
                Some(g) => g.push(i),
                None => groups.push(vec![i]),
            }
        }

        let mut frame_losses: Vec<Option<Var>> = vec![None; batch.len()];
        let mut parts = LossParts::default();
        let mut visible = vec![Vec::new(); batch.len()];
        for group in &groups {
            let pose = &batch[group[0]].pose;
            let bt = forward_kinematics(&model.rig, pose);
            let (dc, dm) = match model.config.shading_features {
                ShadingFeatures::Deformed => {
                    let jinv = deformation_jacobian_inverse(&model.points.binding, &bt);
                    let dc = deform_normals_var(tape, normals, &jinv)?;
                    let dm = tape.constant(Tensor::from_vec3s(&template_normal_deformation(&model.rig, &bt)))?;
                    (dc, dm)
                }
                ShadingFeatures::Canonical => (normals, tape.constant(Tensor::from_vec3s(&model.template_normals))?),
            };
            let shading = model.appearance.shading.forward(tape, &sv, dc, dm)?;
            let colors = compose_color(tape, albedo, shading)?;
            let phi = tape.constant(Tensor::from_rows(1, pose.phi.len(), pose.phi.to_vec()))?;
            let theta = tape.constant(Tensor::from_vec3s(&pose.theta))?;
            let deformed = deform_points_var(tape, &model.rig, &model.points.binding, pts, phi, theta, pose)?;
            let template = if geometry { Some(posed_template(&model.rig, pose)?) } else { None };

            for &i in group {
                let f = batch[i];
                let (width, height) = (f.width(), f.height());
                let screen = project_var(tape, deformed, model.points.radius, &f.camera)?;
                let rv = rasterize_var(tape, screen, colors, width, height)?;
                let mut terms = Vec::new();
                let l_rgb = rgb_loss(tape, rv.rgb, &f.rgb, &f.mask)?;
                parts.rgb += tape.value(l_rgb).item().as_f64();
                terms.push(tape.scalar_mul(l_rgb, lit(w.lambda_rgb))?);
                if w.lambda_vgg > 0.0 {
                    let l_vgg = perceptual_loss(tape, &self.extractor, rv.rgb, &f.rgb, width, height)?;
                    parts.vgg += tape.value(l_vgg).item().as_f64();
                    terms.push(tape.scalar_mul(l_vgg, lit(w.lambda_vgg))?);
                }
                let l_mask = mask_loss(tape, rv.alpha, &f.mask)?;
                parts.mask += tape.value(l_mask).item().as_f64();
                terms.push(tape.scalar_mul(l_mask, lit(w.lambda_mask))?);
                let mut total = terms[0];
                for &t in &terms[1..] {
                    total = tape.add(total, t)?;
                }
                frame_losses[i] = Some(total);

                if let Some(template) = &template {
                    let sil = silhouette(template, &model.rig.faces, &f.camera);
                    let dil = dilate(&sil, width, height, DILATION_PX);
                    let sp = screen_from_tensor(tape.value(screen))?;
                    visible[i] = mark_visibility(&sp, &dil, width, height);
                }
            }
        }

        // Batch-index order keeps the reduction deterministic.
        let b = batch.len();
        let mut sum = frame_losses[0].expect("every frame belongs to a pose group");
        for l in &frame_losses[1..] {
            sum = tape.add(sum, l.expect("every frame belongs to a pose group"))?;
        }
        let mut loss = tape.scalar_mul(sum, T::one() / lit(b as f64))?;
        let inv = 1.0 / b as f64;
        parts.rgb *= inv;
        parts.vgg *= inv;
        parts.mask *= inv;
        if let Some(reg) = reg {
            parts.reg = tape.value(reg).item().as_f64();
            let r = tape.scalar_mul(reg, lit(w.lambda_reg))?;
            loss = tape.add(loss, r)?;
        }
        debug_assert!(visible.iter().all(|v| v.is_empty() || v.len() == n));
        Ok(Forward { loss, parts, visible })
    }

    /// Loss terms of `batch` at the current parameters, without updating
    /// anything. `omega_seed` fixes the eikonal samples.
    pub fn batch_loss(&mut self, batch: &[&FrameSample<T>], omega_seed: u64) -> Result<LossParts> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(omega_seed);
        let fwd = self.forward(&mut tape, batch, &mut rng)?;
        self.clear_bindings();
        Ok(fwd.parts)
    }

    fn clear_bindings(&mut self) {
        self.points.zero_grads();
        self.model.sdf.params.zero_grads();
        self.model.appearance.albedo.params.zero_grads();
        self.model.appearance.shading.params.zero_grads();
    }

    /// One optimizer step on `batch`. A non-finite loss or gradient aborts
    /// before any parameter changes.
    pub fn step(&mut self, batch: &[&FrameSample<T>]) -> Result<LossParts> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let geometry = self.geometry_trainable();
        let mut tape = Tape::new();
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        let fwd = self.forward(&mut tape, batch, &mut rng);
        self.rng = rng;
        let abort = |term: &str, s: &Self| Error::NonFiniteLoss { term: term.to_string(), epoch: s.epoch + 1, step: s.step };
        let fwd = match fwd {
            Ok(f) => f,
            Err(Error::NonFinite { op }) => {
                self.clear_bindings();
                return Err(abort(&op, self));
            }
            Err(e) => return Err(e),
        };
        if let Some(term) = fwd.parts.non_finite() {
            self.clear_bindings();
            return Err(abort(term, self));
        }
        tape.backward(fwd.loss)?;
        let m = &mut self.model;
        for store in [&mut self.points, &mut m.sdf.params, &mut m.appearance.albedo.params, &mut m.appearance.shading.params] {
            store.pull_grads(&tape);
        }
        let finite = [&self.points, &m.sdf.params, &m.appearance.albedo.params, &m.appearance.shading.params]
            .iter()
            .all(|s| s.iter().all(|(_, p)| p.grad.as_ref().map_or(true, |g| g.iter().all(|v| v.is_finite()))));
        if !finite {
            self.clear_bindings();
            return Err(abort("gradient", self));
        }

        let tc = &self.config.train;
        let scale = tc.lr_scale(self.step, self.total_steps.max(self.step + 1));
        let lr_geo = T::lit(tc.learning_rate * scale);
        let lr_app = T::lit(tc.appearance_learning_rate * scale);
        if geometry {
            self.adam.step(&mut self.points, lr_geo)?;
            self.adam.step(&mut m.sdf.params, lr_geo)?;
            m.points.coords = self.points.get(POINTS)?.tensor().to_vec3s();
            for v in &fwd.visible {
                m.points.mark_visible(v)?;
            }
        }
        self.adam.step(&mut m.appearance.albedo.params, lr_app)?;
        self.adam.step(&mut m.appearance.shading.params, lr_app)?;
        self.clear_bindings();
        self.step += 1;
        Ok(fwd.parts)
    }

    /// Fits the SDF alone to the current points (value and eikonal terms).
    pub fn warmup_sdf(&mut self, steps: usize) -> Result<f64> {
        let w = &self.config.loss;
        let (ls, le) = (T::lit(w.lambda_sdf.max(1e-3)), T::lit(w.lambda_eik.max(1e-3)));
        let lr = T::lit(self.config.train.sdf_warmup_learning_rate);
        let mut adam = Adam::default();
        let mut last = f64::NAN;
        for _ in 0..steps {
            let mut tape = Tape::new();
            let m = &mut self.model;
            let pts = tape.constant(Tensor::from_vec3s(&m.points.coords))?;
            let sv = m.sdf.bind(&mut tape)?;
            let omega = sample_omega(&m.points.coords, m.points.radius, &mut self.rng);
            let terms = regularization_terms(&mut tape, &m.sdf, &sv, pts, &omega)?;
            let loss = regularization_loss(&mut tape, &terms, ls, le)?;
            last = tape.value(loss).item().as_f64();
            if !last.is_finite() {
                m.sdf.params.zero_grads();
                return Err(Error::NonFiniteLoss { term: "reg".into(), epoch: 0, step: 0 });
            }
            tape.backward(loss)?;
            m.sdf.params.pull_grads(&tape);
            adam.step(&mut m.sdf.params, lr)?;
        }
        Ok(last)
    }

    /// Mean metrics of the current model over `frames`.
    pub fn evaluate(&self, frames: &[FrameSample<T>]) -> Result<Metrics> {
        if frames.is_empty() {
            return Err(Error::Empty("evaluation frames"));
        }
        let albedo = self.model.albedo()?;
        let normals = match &self.frozen_normals {
            Some(n) if !self.geometry_trainable() => n.clone(),
            _ => self.model.canonical_normals()?.0,
        };
        let mut acc = Metrics { iou: 0.0, psnr: 0.0, ssim: 0.0 };
        let mut cache: Option<(&crate::rig::PoseParams<T>, Vec<Vec3<T>>)> = None;
        for f in frames {
            let colors = match &cache {
                Some((p, c)) if **p == f.pose => c.clone(),
                _ => {
                    let (dc, dm) = self.model.shading_inputs(&normals, &f.pose)?;
                    let s = self.model.appearance.shading(&dc, &dm)?;
                    let c = crate::appearance::compose_colors(&albedo, &s)?;
                    cache = Some((&f.pose, c.clone()));
                    c
                }
            };
            let r = self.model.render_with_colors(&f.pose, &f.camera, &colors)?;
            let m = metrics(&r.rgb, &f.rgb, &r.alpha, &f.mask, f.width(), f.height())?;
            acc.iou += m.iou;
            acc.psnr += m.psnr;
            acc.ssim += m.ssim;
        }
        let k = frames.len() as f64;
        Ok(Metrics { iou: acc.iou / k, psnr: acc.psnr / k, ssim: acc.ssim / k })
    }

    fn remap_points(&mut self, map: &[Option<usize>]) {
        self.adam.remap_rows(POINTS, 3, map);
    }

    /// Runs one epoch: scheduled upsampling, every batch, pruning and the
    /// log row.
    pub fn run_epoch(&mut self, dataset: &Dataset<T>) -> Result<EpochLog> {
        let e = self.epoch + 1;
        let tc = self.config.train.clone();
        if self.total_steps == 0 {
            self.total_steps = tc.epochs * self.batches_per_epoch(&dataset.train);
        }
        if tc.is_upsample_epoch(e) {
            let n = self.model.points.len();
            let rig = self.model.rig.clone();
            self.model.points.upsample(&rig, &mut self.rng)?;
            let map: Vec<Option<usize>> = (0..self.model.points.len()).map(|i| (i < n).then_some(i)).collect();
            self.remap_points(&map);
        }
        if tc.geometry_trainable(e) {
            self.frozen_normals = None;
        }
        self.model.points.begin_epoch();

        let start = Instant::now();
        let mut sum = LossParts::default();
        let mut steps = 0usize;
        let mut frames = 0usize;
        for batch in self.batches(&dataset.train) {
            let refs: Vec<&FrameSample<T>> = batch.iter().map(|&i| &dataset.train[i]).collect();
            let p = self.step(&refs)?;
            sum.rgb += p.rgb;
            sum.vgg += p.vgg;
            sum.mask += p.mask;
            sum.reg += p.reg;
            steps += 1;
            frames += refs.len();
        }
        let ms_per_frame = start.elapsed().as_secs_f64() * 1e3 / frames.max(1) as f64;

        if tc.geometry_trainable(e) && tc.prune {
            let report = self.model.points.prune()?;
            if report.removed > 0 {
                let mut map = vec![None; self.model.points.len()];
                for (new, &old) in report.kept.iter().enumerate() {
                    map[new] = Some(old);
                }
                self.remap_points(&map);
                log::info!("epoch {e}: pruned {} points", report.removed);
            }
        }
        self.epoch = e;

        let k = steps.max(1) as f64;
        let mean = LossParts { rgb: sum.rgb / k, vgg: sum.vgg / k, mask: sum.mask / k, reg: sum.reg / k };
        let due = e == tc.epochs || (tc.eval_every > 0 && e.is_multiple_of(tc.eval_every));
        let scores = if due {
            let eval = if dataset.val.is_empty() { &dataset.train } else { &dataset.val };
            Some(self.evaluate(eval)?)
        } else {
            None
        };
        let w = &self.config.loss;
        let row = EpochLog {
            epoch: e,
            step: self.step,
            loss_rgb: mean.rgb,
            loss_vgg: mean.vgg,
            loss_mask: mean.mask,
            loss_reg: mean.reg,
            loss_total: mean.total(w),
            lambda_rgb: w.lambda_rgb,
            lambda_vgg: w.lambda_vgg,
            lambda_mask: w.lambda_mask,
            lambda_reg: w.lambda_reg,
            lambda_sdf: w.lambda_sdf,
            lambda_eik: w.lambda_eik,
            num_points: self.model.points.len(),
            radius: self.model.points.radius.as_f64(),
            psnr: scores.map(|s| s.psnr),
            ssim: scores.map(|s| s.ssim),
            iou: scores.map(|s| s.iou),
            ms_per_frame,
        };
        log::info!(
            "epoch {e}: loss {:.5} (rgb {:.5}, vgg {:.5}, mask {:.5}, reg {:.5}), {} points",
            row.loss_total,
            row.loss_rgb,
            row.loss_vgg,
            row.loss_mask,
            row.loss_reg,
            row.num_points
        );
        self.log.push(row.clone());
        Ok(row)
    }

    /// Runs the remaining epochs. On error the model holds the parameters
    /// of the last successful step.
    pub fn run(&mut self, dataset: &Dataset<T>) -> Result<()> {
        dataset.validate()?;
        if self.epoch == 0 && self.step == 0 && self.config.train.sdf_warmup_steps > 0 {
            self.warmup_sdf(self.config.train.sdf_warmup_steps)?;
        }
        while self.epoch < self.config.train.epochs {
            self.run_epoch(dataset)?;
        }
        Ok(())
    }
}

/// Trains `model` on `dataset` and returns it with the epoch log.
pub fn train<T: Real>(model: HandModel<T>, dataset: &Dataset<T>, config: &RunConfig) -> Result<(HandModel<T>, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.run(dataset)?;
    Ok((trainer.model, trainer.log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appearance::AttentionConfig;
    use crate::geometry::SdfConfig;
    use crate::renderer::Camera;
    use crate::rig::{build_toy_rig, PoseParams, ToyRigConfig};
    use crate::training::{ModelConfig, TrainConfig};

    fn model() -> HandModel<f64> {
        let cfg = ModelConfig {
            sdf: SdfConfig { hidden_layers: 2, width: 16, ..Default::default() },
            attention: AttentionConfig { hidden: 16, d_cross: 8, seed: 5 },
            shading_features: ShadingFeatures::Deformed,
        };
        HandModel::new(build_toy_rig(&ToyRigConfig::default()), cfg).unwrap()
    }

    fn camera(angle: f64, res: usize) -> Camera<f64> {
        let c = model().rig.vertices.iter().fold([0.0; 3], |a, v| [a[0] + v[0], a[1] + v[1], a[2] + v[2]]);
        let n = model().rig.vertices.len() as f64;
        let c = c.map(|x| x / n);
        let eye = [c[0] + 0.35 * angle.sin(), c[1], c[2] - 0.35 * angle.cos()];
        Camera::look_at(eye, c, [0.0, 1.0, 0.0], res as f64 * 1.4, res, res).unwrap()
    }

    /// Frames rendered by a differently initialized model.
    fn dataset(frames: usize, res: usize) -> Dataset<f64> {
        let mut teacher = model();
        for (_, p) in teacher.appearance.albedo.params.iter_mut() {
            p.values.iter_mut().enumerate().for_each(|(i, v)| *v += 0.05 * ((i % 7) as f64 - 3.0));
        }
        let nj = teacher.rig.num_joints();
        let train = (0..frames)
            .map(|k| {
                let mut pose = PoseParams::rest(nj);
                pose.theta[1] = [0.2 * k as f64, 0.0, 0.1];
                let cam = camera(0.4 * k as f64, res);
                let r = teacher.render(&pose, &cam).unwrap();
                FrameSample { rgb: r.rgb.clone(), mask: r.alpha.iter().map(|&a| a > 0.5).collect(), camera: cam, pose }
            })
            .collect();
        Dataset { train, val: Vec::new() }
    }

    fn run_config(epochs: usize, freeze: usize) -> RunConfig {
        let mut rc = RunConfig::default();
        rc.train = TrainConfig {
            epochs,
            geometry_freeze_epoch: freeze,
            upsample_every: 2,
            batch_size: 2,
            learning_rate: 1e-4,
            appearance_learning_rate: 3e-3,
            width: 24,
            height: 24,
            seed: 11,
            ..Default::default()
        };
        rc
    }

    #[test]
    fn loss_decreases_on_most_of_the_first_steps() {
        let data = dataset(2, 24);
        let mut t = Trainer::new(model(), run_config(100, 100)).unwrap();
        let batch: Vec<&FrameSample<f64>> = data.train.iter().collect();
        let w = t.config.loss.clone();
        let mut prev = t.batch_loss(&batch, 1).unwrap().total(&w);
        let mut decreases = 0;
        for _ in 0..50 {
            t.step(&batch).unwrap();
            let now = t.batch_loss(&batch, 1).unwrap().total(&w);
            decreases += usize::from(now < prev);
            prev = now;
        }
        assert!(decreases >= 45, "{decreases} of 50");
    }

    #[test]
    fn batch_loss_is_the_mean_of_frame_losses() {
        let data = dataset(4, 20);
        let mut t = Trainer::new(model(), run_config(10, 5)).unwrap();
        let w = t.config.loss.clone();
        let all: Vec<&FrameSample<f64>> = data.train.iter().collect();
        let joint = t.batch_loss(&all, 3).unwrap().total(&w);
        let single: f64 = all.iter().map(|f| t.batch_loss(&[*f], 3).unwrap().total(&w)).sum::<f64>() / 4.0;
        assert!((joint - single).abs() < 1e-9, "{joint} vs {single}");
    }

    #[test]
    fn schedule_freeze_and_determinism() {
        let data = dataset(2, 16);
        let mut rc = run_config(5, 2);
        rc.train.prune = false;
        rc.train.eval_every = 1;
        let run = || {
            let mut t = Trainer::new(model(), rc.clone()).unwrap();
            let n0 = t.model.points.len();
            let mut geo = Vec::new();
            while t.epoch < rc.train.epochs {
                t.run_epoch(&data).unwrap();
                geo.push((t.model.points.coords.clone(), t.model.sdf.params.get("sdf.w0").unwrap().values.clone()));
            }
            assert_eq!(t.model.points.len(), 2 * n0);
            (t.log, geo)
        };
        let (log_a, geo) = run();
        for g in &geo[2..] {
            assert_eq!(g, &geo[1]);
        }
        let (log_b, _) = run();
        let strip = |l: &[EpochLog]| l.iter().map(|r| EpochLog { ms_per_frame: 0.0, ..r.clone() }).collect::<Vec<_>>();
        assert_eq!(strip(&log_a), strip(&log_b));
        assert!(log_a.iter().all(|r| r.psnr.is_some()));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log(&path, &log_a).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        for col in ["epoch", "step", "loss_rgb", "lambda_eik", "num_points", "radius", "psnr", "ssim", "iou", "ms_per_frame"] {
            assert!(header.split(',').any(|c| c == col), "{col}");
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut t = Trainer::new(model(), run_config(2, 1)).unwrap();
        assert!(matches!(t.run(&Dataset::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn non_finite_loss_aborts_without_touching_parameters() {
        let mut data = dataset(1, 16);
        data.train[0].rgb[0] = [f64::NAN; 3];
        data.train[0].mask[0] = true;
        let mut t = Trainer::new(model(), run_config(2, 1)).unwrap();
        let before = t.model.appearance.albedo.params.get("albedo.wq").unwrap().values.clone();
        let batch = [&data.train[0]];
        let r = t.step(&batch);
        assert!(matches!(r, Err(Error::NonFiniteLoss { .. })), "{r:?}");
        assert_eq!(t.model.appearance.albedo.params.get("albedo.wq").unwrap().values, before);
    }
}
