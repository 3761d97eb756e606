//! Batched forward pass and BPTT backward pass of [`FusionModel`].

use crate::error::{Error, Result};
use crate::layers::activations::{g, g_grad_from_output};
use crate::layers::{
    batch_norm_backward, batch_norm_forward, dropout_forward, lstm_backward_sequence, lstm_forward_sequence,
    BatchNormCache, LstmStepTrace, Mode,
};
use crate::model::loss::{margin_loss_grad, LossParts, ModelOutput, Target};
use crate::model::{combined_loss_with, FusionModel, FusionParams};
use crate::rng::Rng;
use crate::tensor::{gemv_acc, gemv_t_acc, outer_acc, Tensor};

/// One aligned bimodal sequence: `video` is `[T×d_video]`, `audio` `[T×d_audio]`.
#[derive(Debug, Clone, Copy)]
pub struct SampleInput<'a> {
    pub video: &'a Tensor,
    pub audio: &'a Tensor,
}

#[derive(Debug, Clone)]
struct StreamTrace {
    steps: Vec<LstmStepTrace>,
    /// 0/1 keep mask `[T×hidden]`.
    mask: Tensor,
    /// Hidden outputs after dropout `[T×hidden]`.
    dropped: Tensor,
}

#[derive(Debug, Clone)]
struct SampleTrace {
    video: StreamTrace,
    audio: StreamTrace,
    /// `f_t` for every step `[T×fused]`.
    fused: Tensor,
}

#[derive(Debug, Clone)]
struct MlpTrace {
    input: Tensor,
    bn: BatchNormCache,
    /// Post-normalization output (pre-ReLU).
    normed: Tensor,
}

/// Intermediate values from [`FusionModel::forward`], consumed by [`FusionModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    version: u64,
    samples: Vec<SampleTrace>,
    mlp: Vec<MlpTrace>,
    pooled_v: Tensor,
    pooled_a: Tensor,
    pub output: ModelOutput,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    /// Batch-norm caches, in layer order, for updating running statistics.
    pub fn bn_caches(&self) -> impl Iterator<Item = &BatchNormCache> {
        self.mlp.iter().map(|m| &m.bn)
    }
}

impl FusionModel {
    /// Runs the batch through both streams, fusion, pooling and all heads.
    ///
    /// Dropout masks for sample `k` of the batch are drawn from `rng.split(k)`.
    /// Batch-norm running statistics are left untouched; call
    /// [`FusionModel::update_bn_stats`] with the returned trace to advance them.
    pub fn forward(&self, batch: &[SampleInput<'_>], mode: Mode, rng: &Rng) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let p = &self.params;
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let b = batch.len();
        let mut samples = Vec::with_capacity(b);
        let mut pooled_main = Tensor::zeros(&[b, cfg.fused]);
        let mut pooled_v = Tensor::zeros(&[b, cfg.hidden]);
        let mut pooled_a = Tensor::zeros(&[b, cfg.hidden]);
        for (k, s) in batch.iter().enumerate() {
            let t_len = s.video.rows();
            if s.video.shape().len() != 2 || s.audio.shape().len() != 2 {
                return Err(Error::dim("forward input rank", s.video.shape(), s.audio.shape()));
            }
            if t_len == 0 || s.audio.rows() != t_len {
                return Err(Error::dim("forward step counts", s.video.shape(), s.audio.shape()));
            }
            if s.video.cols() != cfg.d_video || s.audio.cols() != cfg.d_audio {
                return Err(Error::dim(
                    "forward feature dims",
                    &[cfg.d_video, cfg.d_audio],
                    &[s.video.cols(), s.audio.cols()],
                ));
            }
            let srng = rng.split(k as u64);
            let video = run_stream(s.video, &p.video_lstm, cfg, mode, &mut srng.split(0))?;
            let audio = run_stream(s.audio, &p.audio_lstm, cfg, mode, &mut srng.split(1))?;
            let w = cfg.pooling.weight(t_len);

            let mut fused = Tensor::zeros(&[t_len, cfg.fused]);
            for t in 0..t_len {
                let row = fused.row_mut(t);
                gemv_acc(&p.proj_v, video.dropped.row(t), row);
                gemv_acc(&p.proj_a, audio.dropped.row(t), row);
                row.iter_mut().for_each(|v| *v = g(*v));
                for (acc, v) in pooled_main.row_mut(k).iter_mut().zip(fused.row(t)) {
                    *acc += w * v;
                }
                for (acc, v) in pooled_v.row_mut(k).iter_mut().zip(video.dropped.row(t)) {
                    *acc += w * v;
                }
                for (acc, v) in pooled_a.row_mut(k).iter_mut().zip(audio.dropped.row(t)) {
                    *acc += w * v;
                }
            }
            samples.push(SampleTrace { video, audio, fused });
        }

        let mut mlp = Vec::with_capacity(p.mlp.len());
        let mut act = pooled_main;
        let last = p.mlp.len() - 1;
        for (l, layer) in p.mlp.iter().enumerate() {
            let lin = layer.linear.forward(&act)?;
            let (normed, bn) = batch_norm_forward(&lin, &layer.bn, mode)?;
            let next = if l < last { normed.map(crate::layers::relu) } else { normed.clone() };
            mlp.push(MlpTrace { input: act, bn, normed });
            act = next;
        }
        let output = ModelOutput {
            main_scores: act,
            aux_v_scores: p.aux_v.forward(&pooled_v)?,
            aux_a_scores: p.aux_a.forward(&pooled_a)?,
        };
        for s in [&output.main_scores, &output.aux_v_scores, &output.aux_a_scores] {
            s.ensure_finite("model scores")?;
        }
        Ok(ForwardTrace {
            mode,
            version: self.version,
            samples,
            mlp,
            pooled_v,
            pooled_a,
            output,
        })
    }

    /// Convenience: eval-mode scores for a batch.
    pub fn predict(&self, batch: &[SampleInput<'_>]) -> Result<ModelOutput> {
        Ok(self.forward(batch, Mode::Eval, &Rng::new(0))?.output)
    }

    pub fn loss(&self, trace: &ForwardTrace, targets: &[Target]) -> Result<LossParts> {
        combined_loss_with(&trace.output, targets, self.config.alpha, self.config.beta, self.config.loss)
    }

    /// Advances batch-norm running statistics using a train-mode trace.
    pub fn update_bn_stats(&mut self, trace: &ForwardTrace) {
        for (layer, cache) in self.params.mlp.iter_mut().zip(trace.bn_caches()) {
            layer.bn.update_running(cache);
        }
    }

    /// Gradients of the combined loss w.r.t. every trainable tensor.
    pub fn backward(&self, trace: &ForwardTrace, targets: &[Target]) -> Result<FusionParams> {
        if trace.version != self.version {
            return Err(Error::Config("forward trace is stale: parameters changed since it was recorded".into()));
        }
        let cfg = &self.config;
        let p = &self.params;
        let b = trace.samples.len();
        if targets.len() != b {
            return Err(Error::dim("backward targets", &[b], &[targets.len()]));
        }
        let mut grads = p.zeros_like();
        let out = &trace.output;
        let inv_b = 1.0 / b as f64;

        let mut d_main = Tensor::zeros(out.main_scores.shape());
        let mut d_aux_v = Tensor::zeros(out.aux_v_scores.shape());
        let mut d_aux_a = Tensor::zeros(out.aux_a_scores.shape());
        for (r, &t) in targets.iter().enumerate() {
            margin_loss_grad(out.main_scores.row(r), t, cfg.loss, inv_b, d_main.row_mut(r))?;
            margin_loss_grad(out.aux_v_scores.row(r), t, cfg.loss, cfg.alpha * inv_b, d_aux_v.row_mut(r))?;
            margin_loss_grad(out.aux_a_scores.row(r), t, cfg.loss, cfg.beta * inv_b, d_aux_a.row_mut(r))?;
        }

        // Main head.
        let mut d_act = d_main;
        let last = p.mlp.len() - 1;
        for l in (0..p.mlp.len()).rev() {
            let layer = &p.mlp[l];
            let tr = &trace.mlp[l];
            if l < last {
                for (d, &z) in d_act.data_mut().iter_mut().zip(tr.normed.data()) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grads.mlp[l];
            let d_lin = batch_norm_backward(&d_act, &layer.bn, &tr.bn, &mut g.bn.gamma, &mut g.bn.beta_shift)?;
            d_act = layer.linear.backward(&tr.input, &d_lin, &mut g.linear)?;
        }
        let d_pooled_main = d_act;

        // Auxiliary heads.
        let d_pooled_v = p.aux_v.backward(&trace.pooled_v, &d_aux_v, &mut grads.aux_v)?;
        let d_pooled_a = p.aux_a.backward(&trace.pooled_a, &d_aux_a, &mut grads.aux_a)?;

        let keep_scale = 1.0 / (1.0 - if trace.mode == Mode::Train { cfg.dropout_rate } else { 0.0 });
        for (k, s) in trace.samples.iter().enumerate() {
            let t_len = s.fused.rows();
            let w = cfg.pooling.weight(t_len);
            let mut dh_v = Tensor::zeros(&[t_len, cfg.hidden]);
            let mut dh_a = Tensor::zeros(&[t_len, cfg.hidden]);
            let mut d_pre = vec![0.0; cfg.fused];
            for t in 0..t_len {
                for ((dp, &f), &dm) in d_pre.iter_mut().zip(s.fused.row(t)).zip(d_pooled_main.row(k)) {
                    *dp = w * dm * g_grad_from_output(f);
                }
                outer_acc(&mut grads.proj_v, &d_pre, s.video.dropped.row(t));
                outer_acc(&mut grads.proj_a, &d_pre, s.audio.dropped.row(t));

                let row_v = dh_v.row_mut(t);
                gemv_t_acc(&p.proj_v, &d_pre, row_v);
                for ((d, &dp), &m) in row_v.iter_mut().zip(d_pooled_v.row(k)).zip(s.video.mask.row(t)) {
                    *d = (*d + w * dp) * m * keep_scale;
                }
                let row_a = dh_a.row_mut(t);
                gemv_t_acc(&p.proj_a, &d_pre, row_a);
                for ((d, &dp), &m) in row_a.iter_mut().zip(d_pooled_a.row(k)).zip(s.audio.mask.row(t)) {
                    *d = (*d + w * dp) * m * keep_scale;
                }
            }
            lstm_backward_sequence(&s.video.steps, &p.video_lstm, cfg.variant, &dh_v, &mut grads.video_lstm)?;
            lstm_backward_sequence(&s.audio.steps, &p.audio_lstm, cfg.variant, &dh_a, &mut grads.audio_lstm)?;
        }
        Ok(grads)
    }
}

fn run_stream(
    xs: &Tensor,
    lstm: &crate::layers::LstmParams,
    cfg: &crate::model::ModelConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<StreamTrace> {
    let steps = lstm_forward_sequence(xs, lstm, cfg.variant)?;
    let t_len = steps.len();
    let mut h = Tensor::zeros(&[t_len, cfg.hidden]);
    for (t, s) in steps.iter().enumerate() {
        h.row_mut(t).copy_from_slice(s.h.data());
    }
    let (dropped, mask) = dropout_forward(&h, cfg.dropout_rate, mode, rng)?;
    Ok(StreamTrace { steps, mask, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::CellVariant;
    use crate::model::tests::small;
    use crate::model::{ModelConfig, Pooling};

    fn rand_seq(rng: &mut Rng, t: usize, d: usize) -> Tensor {
        Tensor::matrix(t, d, (0..t * d).map(|_| rng.normal()).collect()).unwrap()
    }

    struct Fixture {
        videos: Vec<Tensor>,
        audios: Vec<Tensor>,
        targets: Vec<Target>,
    }

    impl Fixture {
        fn new(cfg: &ModelConfig, b: usize, t: usize, seed: u64) -> Self {
            let mut rng = Rng::new(seed);
            Fixture {
                videos: (0..b).map(|_| rand_seq(&mut rng, t, cfg.d_video)).collect(),
                audios: (0..b).map(|_| rand_seq(&mut rng, t, cfg.d_audio)).collect(),
                targets: (0..b).map(|k| Target::new(k % cfg.classes, cfg.classes).unwrap()).collect(),
            }
        }

        fn batch(&self) -> Vec<SampleInput<'_>> {
            self.videos.iter().zip(&self.audios).map(|(video, audio)| SampleInput { video, audio }).collect()
        }
    }

    fn full_grad_error(cfg: ModelConfig, seed: u64, b: usize, t: usize) -> f64 {
        let rep = crate::gradcheck::full_model_check(&cfg, seed, b, t).unwrap();
        if let Some(w) = rep.worst().filter(|w| w.max_rel_error > 1e-4) {
            eprintln!("worst: {}[{}] = {:e}", w.name, w.worst_index, w.max_rel_error);
        }
        rep.max_rel_error()
    }

    fn gradcheck_cfg(variant: CellVariant) -> ModelConfig {
        ModelConfig {
            d_video: 2,
            d_audio: 2,
            hidden: 2,
            fused: 2,
            mlp_hidden: [3, 3],
            classes: 2,
            variant,
            dropout_rate: 0.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn full_model_gradients() {
        for v in CellVariant::ALL {
            for seed in 0..5 {
                let err = full_grad_error(gradcheck_cfg(v), seed, 16, 3);
                assert!(err < 1e-4, "{v} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn full_model_gradients_with_dropout_and_mean_pooling() {
        let cfg = ModelConfig { dropout_rate: 0.3, pooling: Pooling::Mean, fused: 3, ..gradcheck_cfg(CellVariant::Standard) };
        let err = full_grad_error(cfg, 21, 16, 4);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_params_zero_scores() {
        let cfg = small();
        let mut model = FusionModel::new(cfg.clone(), 0).unwrap();
        for t in model.params_mut().tensors_mut() {
            t.fill(0.0);
        }
        let fx = Fixture::new(&cfg, 3, 4, 1);
        let tr = model.forward(&fx.batch(), Mode::Train, &Rng::new(0)).unwrap();
        for s in [&tr.output.main_scores, &tr.output.aux_v_scores, &tr.output.aux_a_scores] {
            assert!(s.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_step_scalar_oracle() {
        let cfg = ModelConfig {
            d_video: 1,
            d_audio: 1,
            hidden: 1,
            fused: 1,
            mlp_hidden: [1, 1],
            classes: 2,
            dropout_rate: 0.0,
            ..ModelConfig::default()
        };
        let mut model = FusionModel::new(cfg, 0).unwrap();
        let p = model.params_mut();
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        p.video_lstm.w_z.fill(1.0);
        p.video_lstm.w_o.fill(1.0);
        p.audio_lstm.w_z.fill(-0.5);
        p.proj_v.fill(1.0);
        p.proj_a.fill(2.0);
        p.aux_v.weight = Tensor::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        p.aux_a.weight = Tensor::from_rows(&[vec![3.0], vec![0.0]]).unwrap();
        p.aux_a.bias = Some(Tensor::vector(vec![0.1, 0.2]));
        for l in &mut p.mlp {
            l.linear.weight.fill(1.0);
            l.bn.gamma.fill(2.0);
            l.bn.beta_shift.fill(0.5);
        }
        let (xv, xa): (f64, f64) = (0.8, 1.2);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        // Video: i = f = 0.5 (zero pre-activation), z = tanh(x), o = σ(x).
        let cv = 0.5 * xv.tanh();
        let hv = cv * sig(xv).tanh();
        let ca = 0.5 * (-0.5 * xa).tanh();
        let ha = ca * 0.5f64.tanh();
        let f = (2.0 / 3.0 * (hv + 2.0 * ha)).tanh();
        // Eval batch norm with running mean 0, var 1: y = 2·x/√(1+1e-5) + 0.5.
        let bn = |x: f64| 2.0 * x / (1.0f64 + 1e-5).sqrt() + 0.5;
        let m1 = bn(f).max(0.0);
        let m2 = bn(m1).max(0.0);
        let m3 = bn(m2);
        let video = Tensor::matrix(1, 1, vec![xv]).unwrap();
        let audio = Tensor::matrix(1, 1, vec![xa]).unwrap();
        let out = model.predict(&[SampleInput { video: &video, audio: &audio }]).unwrap();
        let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        close(out.main_scores.at(0, 0), m3);
        close(out.main_scores.at(0, 1), m3);
        close(out.aux_v_scores.at(0, 0), hv);
        close(out.aux_v_scores.at(0, 1), -hv);
        close(out.aux_a_scores.at(0, 0), 3.0 * ha + 0.1);
        close(out.aux_a_scores.at(0, 1), 0.2);
    }

    #[test]
    fn repeated_frames_double_pooled_aux_sums() {
        // i saturated on, f saturated off, no recurrence: each h_t depends on x_t only.
        let cfg = ModelConfig { dropout_rate: 0.0, ..small() };
        let mut model = FusionModel::new(cfg.clone(), 4).unwrap();
        let p = model.params_mut();
        for lstm in [&mut p.video_lstm, &mut p.audio_lstm] {
            lstm.b_i.fill(40.0);
            lstm.b_f.fill(-40.0);
            for u in [&mut lstm.u_i, &mut lstm.u_f, &mut lstm.u_z, &mut lstm.u_o] {
                u.fill(0.0);
            }
        }
        for head in [&mut p.aux_v, &mut p.aux_a] {
            head.bias.as_mut().unwrap().fill(0.0);
        }
        let mut rng = Rng::new(2);
        let v1 = rand_seq(&mut rng, 1, cfg.d_video);
        let a1 = rand_seq(&mut rng, 1, cfg.d_audio);
        let v2 = Tensor::matrix(2, cfg.d_video, [v1.data(), v1.data()].concat()).unwrap();
        let a2 = Tensor::matrix(2, cfg.d_audio, [a1.data(), a1.data()].concat()).unwrap();
        let one = model.predict(&[SampleInput { video: &v1, audio: &a1 }]).unwrap();
        let two = model.predict(&[SampleInput { video: &v2, audio: &a2 }]).unwrap();
        for (a, b) in [(&one.aux_v_scores, &two.aux_v_scores), (&one.aux_a_scores, &two.aux_a_scores)] {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((2.0 * x - y).abs() < 1e-12, "{x} {y}");
            }
        }
    }

    #[test]
    fn zero_aux_weights_zero_aux_grads() {
        let cfg = ModelConfig { alpha: 0.0, beta: 0.0, ..small() };
        let model = FusionModel::new(cfg.clone(), 3).unwrap();
        let fx = Fixture::new(&cfg, 4, 3, 5);
        let tr = model.forward(&fx.batch(), Mode::Train, &Rng::new(1)).unwrap();
        let g = model.backward(&tr, &fx.targets).unwrap();
        for head in [&g.aux_v, &g.aux_a] {
            assert!(head.weight.data().iter().chain(head.bias.as_ref().unwrap().data()).all(|&v| v == 0.0));
        }
        let parts = model.loss(&tr, &fx.targets).unwrap();
        assert_eq!(parts.total, parts.main);
    }

    #[test]
    fn satisfied_margins_give_zero_grads() {
        let cfg = ModelConfig { dropout_rate: 0.0, ..small() };
        let mut model = FusionModel::new(cfg.clone(), 3).unwrap();
        let p = model.params_mut();
        for head in [&mut p.aux_v, &mut p.aux_a] {
            head.weight.fill(0.0);
            head.bias = Some(Tensor::vector(vec![5.0, 0.0, 0.0]));
        }
        p.mlp[2].linear.weight.fill(0.0);
        p.mlp[2].bn.beta_shift = Tensor::vector(vec![5.0, 0.0, 0.0]);
        let fx = Fixture::new(&cfg, 3, 3, 5);
        let targets = vec![Target::new(0, 3).unwrap(); 3];
        let tr = model.forward(&fx.batch(), Mode::Train, &Rng::new(1)).unwrap();
        assert_eq!(model.loss(&tr, &targets).unwrap().total, 0.0);
        let g = model.backward(&tr, &targets).unwrap();
        assert_eq!(g.grad_norm(), 0.0);
    }

    #[test]
    fn stale_trace_rejected() {
        let cfg = small();
        let mut model = FusionModel::new(cfg.clone(), 3).unwrap();
        let fx = Fixture::new(&cfg, 2, 3, 5);
        let tr = model.forward(&fx.batch(), Mode::Train, &Rng::new(1)).unwrap();
        model.params_mut().proj_v.data_mut()[0] += 1.0;
        assert!(model.backward(&tr, &fx.targets).is_err());
    }

    #[test]
    fn mismatched_streams_rejected() {
        let cfg = small();
        let model = FusionModel::new(cfg.clone(), 3).unwrap();
        let v = Tensor::zeros(&[4, cfg.d_video]);
        let a = Tensor::zeros(&[3, cfg.d_audio]);
        assert!(model.predict(&[SampleInput { video: &v, audio: &a }]).is_err());
        let a = Tensor::zeros(&[4, cfg.d_audio + 1]);
        assert!(model.predict(&[SampleInput { video: &v, audio: &a }]).is_err());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let cfg = small();
        let model = FusionModel::new(cfg.clone(), 3).unwrap();
        let fx = Fixture::new(&cfg, 3, 5, 8);
        let a = model.forward(&fx.batch(), Mode::Eval, &Rng::new(1)).unwrap().output;
        let b = model.forward(&fx.batch(), Mode::Eval, &Rng::new(99)).unwrap().output;
        assert_eq!(a, b);
    }

    #[test]
    fn loss_identity_holds() {
        let cfg = small();
        let model = FusionModel::new(cfg.clone(), 3).unwrap();
        let fx = Fixture::new(&cfg, 5, 4, 8);
        let tr = model.forward(&fx.batch(), Mode::Train, &Rng::new(1)).unwrap();
        let p = model.loss(&tr, &fx.targets).unwrap();
        assert!((p.total - (p.main + 0.2 * p.aux_v + 0.2 * p.aux_a)).abs() < 1e-12);
    }
}
