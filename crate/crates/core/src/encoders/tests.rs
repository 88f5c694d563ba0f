use super::*;
use crate::autodiff::check_param_gradients;

fn set(enc: &mut Encoder, name: &str, values: &[f64]) {
    let id = enc.params().id(name).unwrap_or_else(|| panic!("no param {name}"));
    enc.params_mut().get_mut(id).data_mut().copy_from_slice(values);
}

fn zero_all(enc: &mut Encoder) {
    for t in enc.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

fn scalars(xs: &[f64]) -> Vec<Tensor> {
    xs.iter().map(|&x| Tensor::vector(vec![x])).collect()
}

fn refs(ts: &[Tensor]) -> Vec<&Tensor> {
    ts.iter().collect()
}

fn random_inputs(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Tensor> {
    (0..len).map(|_| Tensor::uniform(&[dim], 1.0, rng)).collect()
}

fn scalar_rcnn() -> Encoder {
    let cfg = EncoderConfig::new(Architecture::Rcnn, 1).with_hidden(1).with_width(2);
    let mut enc = Encoder::new(cfg, 1).unwrap();
    set(&mut enc, "rcnn.w1", &[1.0]);
    set(&mut enc, "rcnn.w2", &[1.0]);
    enc
}

#[test]
fn rcnn_with_closed_gate_is_a_bigram_cnn() {
    let enc = scalar_rcnn();
    let xs = scalars(&[1.0, 2.0, 3.0]);
    let opts = RunOptions {
        gate_override: Some(0.0),
        capture_gates: false,
    };
    let (h, _) = enc.states(&refs(&xs), opts).unwrap();
    let expected = [1.0f64.tanh(), 3.0f64.tanh(), 5.0f64.tanh()];
    for (a, b) in h.iter().zip(expected) {
        assert_eq!(a[0], b);
    }
}

#[test]
fn rcnn_half_gate_unrolled_by_hand() {
    // c1 = [0.5, 0.75], c2 = [0.5, 0.5*0.5 + 0.5*(0.5 + 1)] = [0.5, 1.0]
    let enc = scalar_rcnn();
    let xs = scalars(&[1.0, 1.0]);
    let opts = RunOptions {
        gate_override: Some(0.5),
        capture_gates: true,
    };
    let (h, trace) = enc.states(&refs(&xs), opts).unwrap();
    assert_eq!(h[0][0], 0.5f64.tanh());
    assert_eq!(h[1][0], 1.0f64.tanh());
    assert!((h[1][0] - 0.761594).abs() < 1e-6);
    assert_eq!(trace.unwrap().complements, vec![vec![0.5], vec![0.5]]);
}

#[test]
fn default_rcnn_shapes() {
    let enc = Encoder::new(EncoderConfig::new(Architecture::Rcnn, 200), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs = random_inputs(&mut rng, 10, 200);
    let (h, _) = enc.states(&refs(&xs), RunOptions::default()).unwrap();
    assert_eq!(h.len(), 10);
    assert!(h.iter().all(|s| s.len() == 400));
}

#[test]
fn default_dims_per_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs = random_inputs(&mut rng, 3, 200);
    for (arch, d) in [
        (Architecture::Lstm, 240),
        (Architecture::Gru, 280),
        (Architecture::Cnn, 667),
    ] {
        let enc = Encoder::new(EncoderConfig::new(arch, 200), 3).unwrap();
        let (h, _) = enc.states(&refs(&xs), RunOptions::default()).unwrap();
        assert!(h.iter().all(|s| s.len() == d), "{arch}");
    }
    assert_eq!(EncoderConfig::new(Architecture::Cnn, 200).filter_width, 3);
}

#[test]
fn zero_weight_lstm_and_gru_stay_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs = random_inputs(&mut rng, 5, 4);
    for arch in [Architecture::Lstm, Architecture::Gru] {
        let mut enc = Encoder::new(EncoderConfig::new(arch, 4).with_hidden(3), 2).unwrap();
        zero_all(&mut enc);
        let (h, _) = enc.states(&refs(&xs), RunOptions::default()).unwrap();
        assert!(h.iter().flatten().all(|v| *v == 0.0), "{arch}");
    }
}

#[test]
fn cnn_window_sums() {
    let cfg = EncoderConfig::new(Architecture::Cnn, 1).with_hidden(1).with_width(3);
    let mut enc = Encoder::new(cfg, 1).unwrap();
    for k in 1..=3 {
        set(&mut enc, &format!("cnn.w{k}"), &[1.0]);
    }
    let xs = scalars(&[1.0, 2.0, 3.0, 4.0]);
    let (h, _) = enc.states(&refs(&xs), RunOptions::default()).unwrap();
    // direct window sums with left-truncated windows
    let x = [1.0, 2.0, 3.0, 4.0];
    for (t, state) in h.iter().enumerate() {
        let c: f64 = x[t.saturating_sub(2)..=t].iter().sum();
        assert_eq!(state[0], c.tanh());
    }
    assert_eq!(
        h.iter().map(|s| s[0]).collect::<Vec<_>>(),
        [1.0f64, 3.0, 6.0, 9.0].map(f64::tanh)
    );
}

#[test]
fn cnn_width_one_is_per_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let enc = Encoder::new(EncoderConfig::new(Architecture::Cnn, 3).with_hidden(2).with_width(1), 5).unwrap();
    let xs = random_inputs(&mut rng, 4, 3);
    let (all, _) = enc.states(&refs(&xs), RunOptions::default()).unwrap();
    for (t, x) in xs.iter().enumerate() {
        let (single, _) = enc.states(&[x], RunOptions::default()).unwrap();
        assert_eq!(single[0], all[t]);
    }
}

#[test]
fn empty_sequence_is_rejected() {
    for arch in Architecture::ALL {
        let enc = Encoder::new(EncoderConfig::new(arch, 2).with_hidden(2), 0).unwrap();
        assert!(matches!(enc.states(&[], RunOptions::default()), Err(Error::Empty(_))));
    }
}

#[test]
fn pooling_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
    let m = pool(&mut tape, &[a], Pooling::Mean).unwrap();
    assert!((tape.value(m).data()[0] - 0.6).abs() < 1e-15);
    assert!((tape.value(m).data()[1] - 0.8).abs() < 1e-15);

    let s: Vec<Var> = [[1.0, -2.0], [0.0, 5.0], [7.0, 7.0]]
        .iter()
        .map(|v| tape.constant(Tensor::vector(v.to_vec())).unwrap())
        .collect();
    let last = pool(&mut tape, &s, Pooling::Last).unwrap();
    assert_eq!(last, s[2]);
    let mx = pool(&mut tape, &s[..2], Pooling::Max).unwrap();
    assert_eq!(tape.value(mx).data(), &[1.0, 5.0]);
    assert!(matches!(pool(&mut tape, &[], Pooling::Last), Err(Error::Empty(_))));
}

#[test]
fn mean_pooling_skips_zero_states() {
    let mut tape = Tape::new();
    let z = tape.zeros(2);
    let a = tape.constant(Tensor::vector(vec![0.0, 2.0])).unwrap();
    let m = pool(&mut tape, &[z, a], Pooling::Mean).unwrap();
    assert_eq!(tape.value(m).data(), &[0.0, 1.0]);
    assert!(matches!(
        pool(&mut tape, &[z], Pooling::Mean),
        Err(Error::ZeroVector(_))
    ));
}

#[test]
fn max_pooling_requires_cnn() {
    let cfg = EncoderConfig::new(Architecture::Rcnn, 2).with_pooling(Pooling::Max);
    assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    assert!("bogus".parse::<Architecture>().is_err());
}

#[test]
fn cosine_examples() {
    assert!((cosine(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
}

fn question(title: &str, body: &str) -> Question {
    Question::new(1, title, body).unwrap()
}

fn tiny_table() -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let words = ["how", "to", "boot", "usb", "wifi", "broken", "after", "upgrade"];
    EmbeddingTable::from_rows(
        words
            .iter()
            .map(|w| (w.to_string(), (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect(),
    )
    .unwrap()
}

#[test]
fn encode_question_title_body_average() {
    let emb = tiny_table();
    let enc = Encoder::new(EncoderConfig::new(Architecture::Rcnn, 6).with_hidden(5), 3).unwrap();
    let q = question("how to boot usb", "wifi broken after upgrade");
    let title_only = enc.encode(&q, &emb, false).unwrap();
    let t = enc.encode(&question("how to boot usb", ""), &emb, true).unwrap();
    assert_eq!(title_only, t, "empty body falls back to the title");
    let b = enc
        .encode(&question("wifi broken after upgrade", ""), &emb, false)
        .unwrap();
    let both = enc.encode(&q, &emb, true).unwrap();
    for k in 0..both.len() {
        assert_eq!(both[k], (title_only[k] + b[k]) / 2.0);
    }

    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
    let c = tape.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
    let m = tape.mean(&[a, c]).unwrap();
    assert_eq!(tape.value(m).data(), &[0.5, 0.5]);
}

#[test]
fn reversing_tokens_changes_recurrent_encodings() {
    let emb = tiny_table();
    for arch in [Architecture::Rcnn, Architecture::Lstm, Architecture::Gru] {
        let enc = Encoder::new(EncoderConfig::new(arch, 6).with_hidden(4), 17).unwrap();
        let fwd = enc.encode(&question("how to boot usb", ""), &emb, false).unwrap();
        let rev = enc.encode(&question("usb boot to how", ""), &emb, false).unwrap();
        assert_ne!(fwd, rev, "{arch}");
    }
}

#[test]
fn long_adversarial_input_stays_finite() {
    let emb_dim = 4;
    let mut enc = Encoder::new(EncoderConfig::new(Architecture::Rcnn, emb_dim).with_hidden(3), 2).unwrap();
    for t in enc.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 5.0);
    }
    let big = Tensor::vector(vec![100.0; emb_dim]);
    let xs: Vec<&Tensor> = std::iter::repeat_n(&big, 10_000).collect();
    let (h, _) = enc.states(&xs, RunOptions::default()).unwrap();
    assert!(h.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn gate_complements_in_open_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for scalar in [false, true] {
        let enc = Encoder::new(
            EncoderConfig::new(Architecture::Rcnn, 3)
                .with_hidden(4)
                .with_scalar_decay(scalar),
            6,
        )
        .unwrap();
        let xs = random_inputs(&mut rng, 7, 3);
        let opts = RunOptions {
            gate_override: None,
            capture_gates: true,
        };
        let (_, trace) = enc.states(&refs(&xs), opts).unwrap();
        let trace = trace.unwrap();
        assert_eq!(trace.complements.len(), 7);
        assert!(trace.complements.iter().flatten().all(|v| *v > 0.0 && *v < 1.0));
    }
}

#[test]
fn checkpoint_round_trip() {
    let enc = Encoder::new(
        EncoderConfig::new(Architecture::Gru, 3)
            .with_hidden(2)
            .with_pooling(Pooling::Mean),
        4,
    )
    .unwrap();
    let ck = enc.to_checkpoint(true);
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    let back = Encoder::from_checkpoint(&Checkpoint::read_from(&buf[..]).unwrap()).unwrap();
    assert_eq!(back.config(), enc.config());
    assert_eq!(back.params(), enc.params());
}

#[test]
fn every_architecture_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for arch in Architecture::ALL {
        for pooling in [Pooling::Mean, Pooling::Last] {
            let mut enc = Encoder::new(EncoderConfig::new(arch, 3).with_hidden(3).with_pooling(pooling), 5).unwrap();
            // nonzero biases exercise every path
            for t in enc.params_mut().tensors_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
            }
            let xs = random_inputs(&mut rng, 5, 3);
            let target = Tensor::uniform(&[3], 1.0, &mut rng);
            let r = check_param_gradients(enc.params(), 1e-5, |tape, p| {
                let xv = xs
                    .iter()
                    .map(|x| tape.constant(x.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let v = enc.encode_sequence(tape, p, &xv, None)?;
                let t = tape.constant(target.clone())?;
                tape.cosine(v, t)
            })
            .unwrap();
            assert!(r.max_rel_error <= 1e-4, "{arch}/{pooling}: {}", r.max_rel_error);
        }
    }
}
