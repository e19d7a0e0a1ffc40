mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zvq_core::features::FeatureSequence;
use zvq_core::models::{
    train, Layer, Model, ModelConfig, ModelError, Representation, TrainingSet, Variant, FEATURE_DIM,
};
use zvq_core::numerics::Tensor;
use zvq_core::synth::SynthConfig;

const VARIANTS: [Variant; 2] = [Variant::InWae, Variant::SvqWae];

fn small(variant: Variant, n_downsample: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(variant, 16, n_downsample, 2);
    cfg.encoder.latent_dim = 16;
    cfg.speaker_encoder.speaker_dim = 8;
    cfg.quantizer.codebook_size = 16;
    cfg
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, t: usize) -> Tensor {
    let data = (0..b * FEATURE_DIM * t).map(|_| rng.gen_range(-1.5f32..1.5)).collect();
    Tensor::new(vec![b, FEATURE_DIM, t], data).unwrap()
}

fn random_utterance(rng: &mut ChaCha8Rng, n: usize) -> FeatureSequence {
    let data = (0..n * FEATURE_DIM).map(|_| rng.gen_range(-1.5f32..1.5)).collect();
    FeatureSequence::new("utt", data, FEATURE_DIM, 100.0).unwrap()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn latent_length_follows_downsampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in VARIANTS {
        for (n, want) in [(2, 8), (1, 16)] {
            let m = Model::new(small(v, n), 0).unwrap();
            let z = m.content_encode(&random_batch(&mut rng, 2, 32)).unwrap();
            assert_eq!(z.shape(), &[2, 16, want]);
            assert_eq!(m.config().latent_rate_hz(), 100.0 / (1 << n) as f64);
        }
    }
}

#[test]
fn latent_length_is_exact_for_every_valid_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [1, 2] {
        let m = Model::new(small(Variant::SvqWae, n), 0).unwrap();
        let f = 1 << n;
        for t in 4..=40 {
            let r = m.content_encode(&random_batch(&mut rng, 1, t));
            if t % f == 0 {
                assert_eq!(r.unwrap().shape()[2], t / f, "t={t} n={n}");
            } else {
                assert!(matches!(r, Err(ModelError::Shape(_))), "t={t} n={n}");
            }
        }
    }
}

#[test]
fn variants_contain_only_their_own_bottleneck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_batch(&mut rng, 2, 32);
    let in_trace = Model::new(small(Variant::InWae, 2), 0).unwrap().bottleneck_trace(&x, &[0, 1]).unwrap();
    assert_eq!(in_trace.iter().filter(|l| **l == Layer::InstanceNorm).count(), 5);
    assert_eq!(in_trace.iter().filter(|l| **l == Layer::Adain).count(), 1);
    assert!(!in_trace.contains(&Layer::Quantize));

    let svq = Model::new(small(Variant::SvqWae, 2), 0).unwrap();
    assert_eq!(svq.bottleneck_trace(&x, &[0, 1]).unwrap(), vec![Layer::Quantize]);
    assert!(svq.params().names().iter().all(|n| !n.starts_with("adain") && !n.starts_with("spk.")));
    let in_model = Model::new(small(Variant::InWae, 2), 0).unwrap();
    assert!(in_model.params().names().iter().all(|n| !n.starts_with("vq.")));
    assert!(in_model.codebook().is_none());
}

#[test]
fn instance_norm_removes_input_gain_at_layer_two() {
    // biases start at zero, so a positive gain passes linearly through the
    // first two conv+ReLU layers and the normalization cancels it. ε is
    // lowered because nearly silent ReLU channels have variance close to it.
    let mut cfg = small(Variant::InWae, 2);
    cfg.norm.epsilon = 1e-8;
    let m = Model::new(cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_batch(&mut rng, 3, 32);
    let clean = m.encoder_layers(&x).unwrap();
    for gain in [0.5f32, 3.0, 20.0] {
        let scaled = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * gain).collect()).unwrap();
        let out = m.encoder_layers(&scaled).unwrap();
        let d = max_abs_diff(out[1].data(), clean[1].data());
        assert!(d < 1e-3, "gain {gain}: layer-2 difference {d}");
        // the final code is normalized as well
        assert!(max_abs_diff(out[9].data(), clean[9].data()) < 1e-3);
    }
    // without normalization the same gain shows up unchanged
    let plain = Model::new(small(Variant::SvqWae, 2), 11).unwrap();
    let a = plain.encoder_layers(&x).unwrap();
    let scaled = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * 3.0).collect()).unwrap();
    let b = plain.encoder_layers(&scaled).unwrap();
    let want: Vec<f32> = a[1].data().iter().map(|v| v * 3.0).collect();
    assert!(max_abs_diff(b[1].data(), &want) < 1e-4);
}

#[test]
fn speaker_code_ignores_repetition() {
    let m = Model::new(small(Variant::InWae, 2), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = random_batch(&mut rng, 2, 32);
    let mut tiled = Vec::with_capacity(2 * FEATURE_DIM * 64);
    for row in y.data().chunks(32) {
        tiled.extend_from_slice(row);
        tiled.extend_from_slice(row);
    }
    let y2 = Tensor::new(vec![2, FEATURE_DIM, 64], tiled).unwrap();
    let a = m.speaker_encode(&y).unwrap();
    let b = m.speaker_encode(&y2).unwrap();
    assert_eq!(a.shape(), &[2, 8]);
    assert_eq!(b.shape(), &[2, 8]);
    assert!(max_abs_diff(a.data(), b.data()) < 1e-5);
    assert!(max_abs_diff(&a.data()[..8], &a.data()[8..]) > 1e-4);
    for t in [4, 17, 50] {
        assert_eq!(m.speaker_encode(&random_batch(&mut rng, 1, t)).unwrap().shape(), &[1, 8]);
    }
    assert!(m.speaker_encode(&random_batch(&mut rng, 1, 3)).is_err());
}

#[test]
fn decoder_shapes_and_speaker_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for v in VARIANTS {
        for n in [1, 2] {
            let m = Model::new(small(v, n), 9).unwrap();
            let z = random_batch(&mut rng, 2, 32);
            let z = m.content_encode(&z).unwrap();
            let zs = (v == Variant::InWae).then(|| Tensor::new(vec![2, 8], vec![0.3; 16]).unwrap());
            let a = m.decode(&z, &[0, 0], zs.as_ref()).unwrap();
            assert_eq!(a.shape(), &[2, FEATURE_DIM, 32]);
            let b = m.decode(&z, &[1, 1], zs.as_ref()).unwrap();
            assert!(max_abs_diff(a.data(), b.data()) > 1e-4);
            assert!(matches!(m.decode(&z, &[0, 2], zs.as_ref()), Err(ModelError::UnknownSpeaker(_))));
        }
    }
}

#[test]
fn zero_parameters_decode_zero_codes_to_zero() {
    for v in VARIANTS {
        let mut m = Model::new(small(v, 2), 0).unwrap();
        for t in m.params_mut().tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let z = Tensor::zeros(vec![2, 16, 8]).unwrap();
        let zs = (v == Variant::InWae).then(|| Tensor::zeros(vec![2, 8]).unwrap());
        let out = m.decode(&z, &[0, 1], zs.as_ref()).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }
}

fn tiny_corpus() -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let utts: Vec<FeatureSequence> = (0..6).map(|_| random_utterance(&mut rng, 70)).collect();
    TrainingSet::from_sequences(utts.iter().zip([0, 1, 0, 1, 0, 1])).unwrap()
}

#[test]
fn training_is_deterministic() {
    let data = tiny_corpus();
    for v in VARIANTS {
        let run = || {
            let mut m = Model::new(small(v, 2), 42).unwrap();
            let mut log = Vec::new();
            train(&mut m, &data, 100, |_, s| {
                log.push((s.recon_loss.to_bits(), s.vq_loss.to_bits(), s.total.to_bits()));
                Ok(())
            })
            .unwrap();
            (m, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a.step(), 100);
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert_eq!(a.config().batch_size, 10);
    }
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let data = tiny_corpus();
    let dir = tempfile::tempdir().unwrap();
    for v in VARIANTS {
        let mut straight = Model::new(small(v, 2), 3).unwrap();
        train(&mut straight, &data, 20, |_, _| Ok(())).unwrap();

        let mut first = Model::new(small(v, 2), 3).unwrap();
        train(&mut first, &data, 10, |_, _| Ok(())).unwrap();
        if v == Variant::InWae {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            first.set_speaker_reference(1, &random_utterance(&mut rng, 40)).unwrap();
        }
        let path = dir.path().join(format!("{}.ckpt", v.name()));
        first.save(&path).unwrap();
        let mut resumed = Model::load(&path).unwrap();
        assert_eq!(resumed, first);
        for (a, b) in resumed.params().tensors().iter().zip(first.params().tensors()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(resumed.to_bytes(), first.to_bytes());
        train(&mut resumed, &data, 20, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.params(), straight.params());
        assert_eq!(resumed.adam(), straight.adam());
        assert_eq!(resumed.step(), straight.step());
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m = Model::new(small(Variant::SvqWae, 2), 0).unwrap();
    let bytes = m.to_bytes();
    assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Model::from_bytes(&bad), Err(ModelError::Checkpoint(_))));
    let mut long = bytes;
    long.push(0);
    assert!(Model::from_bytes(&long).is_err());
}

#[test]
fn utterance_encoding_covers_the_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let feat = random_utterance(&mut rng, 98);
    let svq = Model::new(small(Variant::SvqWae, 2), 1).unwrap();
    match svq.encode_utterance(&feat).unwrap() {
        Representation::Codes(c) => {
            // 3 full windows × 8, plus ceil(2/4) for the 2-frame tail
            assert_eq!(c.frames.len(), 25);
            assert!(c.frames.iter().all(|t| t.len() == 4 && t.iter().all(|&i| i < 16)));
            assert_eq!(svq.encode_utterance(&feat).unwrap(), Representation::Codes(c));
        }
        other => panic!("expected codes, got {other:?}"),
    }
    let in_model = Model::new(small(Variant::InWae, 1), 1).unwrap();
    match in_model.encode_utterance(&feat).unwrap() {
        Representation::Continuous(z) => {
            assert_eq!((z.n_frames(), z.dim()), (49, 16));
            assert_eq!(z.frame_rate_hz, 50.0);
        }
        other => panic!("expected continuous codes, got {other:?}"),
    }
    assert!(svq.encode_utterance(&random_utterance(&mut rng, 3)).is_err());
    assert!(svq.encode_utterance(&random_utterance(&mut rng, 4)).is_ok());
}

#[test]
fn padded_tail_reuses_full_window_codes() {
    // the first full window of a longer utterance is encoded exactly as the
    // window on its own
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let long = random_utterance(&mut rng, 45);
    let head = FeatureSequence::new("utt", long.data()[..32 * FEATURE_DIM].to_vec(), FEATURE_DIM, 100.0).unwrap();
    let m = Model::new(small(Variant::SvqWae, 2), 1).unwrap();
    let (Representation::Codes(a), Representation::Codes(b)) =
        (m.encode_utterance(&long).unwrap(), m.encode_utterance(&head).unwrap())
    else {
        panic!("codes expected")
    };
    assert_eq!(a.frames.len(), 12);
    assert_eq!(&a.frames[..8], &b.frames[..]);
}

#[test]
fn conversion_to_source_is_reconstruction() {
    let data = tiny_corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for v in VARIANTS {
        let mut m = Model::new(small(v, 2), 2).unwrap();
        train(&mut m, &data, 5, |_, _| Ok(())).unwrap();
        let src = random_utterance(&mut rng, 75);
        if v == Variant::InWae {
            assert!(matches!(m.convert(&src, 0), Err(ModelError::UnknownSpeaker(_))));
            m.set_speaker_reference(0, &src).unwrap();
            m.set_speaker_reference(1, &random_utterance(&mut rng, 60)).unwrap();
        }
        let out = m.convert(&src, 0).unwrap();
        assert_eq!((out.n_frames(), out.dim(), out.frame_rate_hz), (75, FEATURE_DIM, 100.0));

        // independent reconstruction of the first window
        let x = Tensor::new(
            vec![1, FEATURE_DIM, 32],
            (0..FEATURE_DIM)
                .flat_map(|c| (0..32).map(move |t| (c, t)))
                .map(|(c, t)| src.frame(t)[c])
                .collect(),
        )
        .unwrap();
        let z = m.content_encode(&x).unwrap();
        let z = match m.codebook() {
            None => z,
            Some(book) => {
                let (d, t) = (z.shape()[1], z.shape()[2]);
                let frames: Vec<f32> = (0..t).flat_map(|i| (0..d).map(move |c| (c, i))).map(|(c, i)| z.data()[c * t + i]).collect();
                let q = zvq_core::bottlenecks::sliced_vq_quantize(&Tensor::new(vec![t, d], frames).unwrap(), &book).unwrap();
                let back = (0..d).flat_map(|c| (0..t).map(move |i| (c, i))).map(|(c, i)| q.z_q.data()[i * d + c]).collect();
                Tensor::new(vec![1, d, t], back).unwrap()
            }
        };
        let zs = m.speaker_reference(0).map(|r| Tensor::new(vec![1, r.len()], r.to_vec()).unwrap());
        let recon = m.decode(&z, &[0], zs.as_ref()).unwrap();
        let mse: f64 = (0..32)
            .flat_map(|t| (0..FEATURE_DIM).map(move |c| (t, c)))
            .map(|(t, c)| (out.frame(t)[c] as f64 - recon.data()[c * 32 + t] as f64).powi(2))
            .sum::<f64>()
            / (32 * FEATURE_DIM) as f64;
        assert!(mse < 1e-6, "{}: {mse}", v.name());
        assert_eq!(m.convert(&src, 0).unwrap(), out);
        assert_ne!(m.convert(&src, 1).unwrap(), out);
        assert!(matches!(m.convert(&src, 2), Err(ModelError::UnknownSpeaker(_))));
    }
}

#[test]
fn total_loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = tiny_corpus();
    for v in VARIANTS {
        let mut m = Model::new(small(v, 2), 4).unwrap();
        // a few steps so codebooks are data-initialized and weights are not at init
        train(&mut m, &data, 3, |_, _| Ok(())).unwrap();
        let x = random_batch(&mut rng, 2, 32);
        for trial in 0..3 {
            let r = m.gradient_check(&x, &[0, 1], 16, 1e-5, 5e-3, &mut rng).unwrap();
            assert_eq!(r.report.coordinates, 16);
            assert!(r.report.pass, "{} trial {trial}: {:?}", v.name(), r.report);
            assert!(r.surrogate_gap < 1e-9, "{}: gap {}", v.name(), r.surrogate_gap);
        }
    }
}

#[test]
fn training_reduces_reconstruction_error_on_synthetic_speech() {
    let corpus = common::synth_features(&SynthConfig::default());
    let data = TrainingSet::from_sequences(corpus.features.iter().zip(corpus.speakers.iter().copied())).unwrap();
    for v in VARIANTS {
        let mut ratios = Vec::new();
        for seed in 0..5 {
            let mut m = Model::new(ModelConfig::new(v, 32, 2, 2), seed).unwrap();
            let (mut early, mut late) = (0.0, 0.0);
            train(&mut m, &data, 2000, |_, s| {
                if s.step == 10 {
                    early = s.recon_loss;
                }
                if s.step == 2000 {
                    late = s.recon_loss;
                }
                Ok(())
            })
            .unwrap();
            ratios.push(late / early);
        }
        ratios.sort_by(f64::total_cmp);
        assert!(ratios[2] < 1.0, "{}: ratios {ratios:?}", v.name());
    }
}

#[test]
fn conversion_moves_frames_towards_the_target_speaker() {
    use zvq_core::eval::{LinearProbe, ProbeConfig};
    let corpus = common::synth_features(&SynthConfig::default());
    let (mut train_x, mut train_y) = (Vec::new(), Vec::new());
    for (f, &s) in corpus.features.iter().zip(&corpus.speakers) {
        train_x.extend_from_slice(f.data());
        train_y.extend(std::iter::repeat(s).take(f.n_frames()));
    }
    let probe = LinearProbe::fit(&train_x, FEATURE_DIM, &train_y, 2, &ProbeConfig::default()).unwrap();
    let data = TrainingSet::from_sequences(corpus.features.iter().zip(corpus.speakers.iter().copied())).unwrap();
    for v in VARIANTS {
        let mut m = Model::new(ModelConfig::new(v, 32, 2, 2), 0).unwrap();
        train(&mut m, &data, 2000, |_, _| Ok(())).unwrap();
        if v == Variant::InWae {
            for s in 0..2 {
                let first = corpus.speakers.iter().position(|&x| x == s).unwrap();
                m.set_speaker_reference(s, &corpus.features[first]).unwrap();
            }
        }
        let (mut to_target, mut total) = (0, 0);
        for (f, &s) in corpus.features.iter().zip(&corpus.speakers).step_by(3) {
            let target = 1 - s;
            let out = m.convert(f, target).unwrap();
            let pred = probe.predict(out.data()).unwrap();
            let hits = pred.iter().filter(|&&p| p == target).count();
            to_target += (2 * hits > pred.len()) as usize;
            total += 1;
        }
        assert!(2 * to_target > total, "{}: {to_target}/{total} utterances labelled as target", v.name());
    }
}
