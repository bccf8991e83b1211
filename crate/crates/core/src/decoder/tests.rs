use rand::{Rng, SeedableRng};

use super::*;
use crate::autodiff::{check_gradients, GradCheckOptions};
use crate::synth::{random_database, RandomDbConfig};

const V: usize = 20;

fn small(trainable: bool) -> (Decoder, ParamStore) {
    let cfg = DecoderConfig { d_model: 8, layers: 2, heads: 2, context: 64, trainable, max_new_tokens: 5, head_hidden: 4 };
    let dec = Decoder::new(cfg, V);
    let mut store = ParamStore::new();
    dec.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let prompt: Vec<f64> = (0..3 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    store.insert("test.prompt", Tensor::from_vec(3, 8, prompt)).unwrap();
    (dec, store)
}

#[test]
fn tokenizer_splits_words_and_punctuation() {
    assert_eq!(tokenize("Give Yes or No as an answer."), ["give", "yes", "or", "no", "as", "an", "answer", "."]);
    assert_eq!(tokenize("age is [MASK], top-3"), ["age", "is", "[MASK]", ",", "top", "-", "3"]);
    assert_eq!(tokenize("[x] user_id"), ["[", "x", "]", "user_id"]);
    assert!(tokenize("").is_empty());
}

#[test]
fn vocab_reserved_block_and_round_trip() {
    let db = random_database(3, RandomDbConfig::default());
    let vocab = Vocab::build(&db, &["hello world"], 50);
    for (i, r) in RESERVED.iter().enumerate() {
        assert_eq!(vocab.id(r), Some(i));
    }
    assert_eq!(vocab.encode_text("Yes no hello zzzqqq"), vec![YES, NO, vocab.id("hello").unwrap(), UNK]);
    assert_eq!(vocab.encode_value("a b").len(), 3);
    assert_eq!(vocab.encode_value("a b")[1], vocab.id(SPACE).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    vocab.save(&path).unwrap();
    assert_eq!(Vocab::load(&path).unwrap(), vocab);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("[PAD]"));
    assert_eq!(text.lines().count(), vocab.len());

    assert!(Vocab::from_tokens(["[BOS]".to_string()]).is_err());
    let dup = RESERVED.iter().map(|s| s.to_string()).chain(["x".to_string(), "x".to_string()]);
    assert!(Vocab::from_tokens(dup).is_err());
}

#[test]
fn frequent_values_are_atomic() {
    let db = random_database(4, RandomDbConfig::default());
    let vocab = Vocab::build(&db, &[], 10_000);
    let t = &db.tables[0];
    let c = t.attribute_columns()[0];
    let v = t.entities.iter().find_map(|e| e.attrs[c].render()).unwrap();
    assert_eq!(vocab.encode_value(&v).len(), 1);
}

#[test]
fn text_embedding_shapes_and_determinism() {
    let (dec, store) = small(false);
    let mut g = Graph::inference(&store);
    let e = dec.embed_text(&mut g, &[], 0).unwrap();
    assert_eq!(g.shape(e), [0, 8]);
    let a = dec.embed_text(&mut g, &[YES, NO], 3).unwrap();
    let b = dec.embed_text(&mut g, &[YES, NO], 3).unwrap();
    assert_eq!(g.shape(a), [2, 8]);
    assert_eq!(g.value(a), g.value(b));
    assert!(matches!(dec.embed_text(&mut g, &[1; 10], 60), Err(DecoderError::ContextOverflow { .. })));
}

#[test]
fn answer_strategies() {
    let (dec, store) = small(false);
    let mut g = Graph::inference(&store);
    let p = g.param_named("test.prompt").unwrap();
    match dec.decode(&mut g, p, &[10, 11], AnswerStrategy::TokenDistribution).unwrap() {
        Answer::Distribution { yes, no } => {
            assert!(yes > 0.0 && no > 0.0);
            assert_eq!(yes + no, 1.0);
        }
        a => panic!("{a:?}"),
    }
    assert_eq!(dec.decode(&mut g, p, &[10, 11], AnswerStrategy::MlpHead).unwrap(), Answer::Scalar(0.0));
    let Answer::Text(a) = dec.decode(&mut g, p, &[10], AnswerStrategy::PlainText).unwrap() else { panic!() };
    let Answer::Text(b) = dec.decode(&mut g, p, &[10], AnswerStrategy::PlainText).unwrap() else { panic!() };
    assert_eq!(a, b);
    assert!(a.len() <= 5 && !a.contains(&EOS));
}

#[test]
fn teacher_forcing_matches_stepwise_decoding() {
    let (dec, store) = small(false);
    let mut g = Graph::inference(&store);
    let p = g.param_named("test.prompt").unwrap();
    let text = [9, 10, 11];
    let target = [12, 13, 14, EOS];
    let loss = dec.teacher_forced_loss(&mut g, p, &text, &target).unwrap();
    let loss = g.value(loss).item();

    let mut tokens = text.to_vec();
    tokens.push(BOS);
    let mut nll = 0.0;
    for &y in &target {
        let h = dec.hidden(&mut g, p, &tokens).unwrap();
        let last = g.shape(h)[0] - 1;
        let logits = dec.logits_at(&mut g, h, &[last]).unwrap();
        let row = g.value(logits).row(0).to_vec();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        nll += lse - row[y];
        tokens.push(y);
    }
    assert!((loss - nll / target.len() as f64).abs() < 1e-10);
    assert!(matches!(dec.teacher_forced_loss(&mut g, p, &text, &[]), Err(DecoderError::EmptyTarget)));
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let (dec, mut store) = small(false);
    let id = store.id("dec.tok").unwrap();
    store.get_mut(id).value = Tensor::zeros(V, 8);
    let mut g = Graph::inference(&store);
    let p = g.param_named("test.prompt").unwrap();
    let loss = dec.teacher_forced_loss(&mut g, p, &[1, 2], &[3, 4, 5]).unwrap();
    assert!((g.value(loss).item() - (V as f64).ln()).abs() < 1e-12);
}

#[test]
fn frozen_decoder_passes_gradient_to_prompt_only() {
    let (dec, store) = small(false);
    let mut g = Graph::new(&store);
    let p = g.param_named("test.prompt").unwrap();
    let loss = dec.teacher_forced_loss(&mut g, p, &[9, 10], &[11, 12]).unwrap();
    let grads = g.backward(loss).unwrap();
    for (id, param) in store.iter() {
        let has = grads.get(id).is_some();
        if param.name.starts_with("dec.") {
            assert!(!has, "{}", param.name);
        }
    }
    let pg = grads.get(store.id("test.prompt").unwrap()).unwrap();
    assert!(pg.max_abs() > 0.0);
}

#[test]
fn decoder_gradients_match_finite_differences() {
    let (dec, mut store) = small(true);
    let report = check_gradients(
        &mut store,
        |g| -> Result<Var> {
            let p = g.param_named("test.prompt")?;
            let a = dec.teacher_forced_loss(g, p, &[9, 10], &[11, 12, EOS])?;
            let yn = dec.yes_no(g, p, &[9])?;
            let yn = g.log(yn);
            let yn = g.sum(yn);
            let s = dec.scalar(g, p, &[9])?;
            let s = g.sum(s);
            let ab = g.add(a, yn)?;
            Ok(g.add(ab, s)?)
        },
        GradCheckOptions { max_coords_per_param: 6, ..Default::default() },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn logits_are_causal() {
    let (dec, store) = small(false);
    let mut g = Graph::inference(&store);
    let p = g.param_named("test.prompt").unwrap();
    let h1 = dec.hidden(&mut g, p, &[9, 10, 11, 12]).unwrap();
    let h2 = dec.hidden(&mut g, p, &[9, 10, 15, 16]).unwrap();
    let (a, b) = (g.value(h1).clone(), g.value(h2).clone());
    for r in 0..5 {
        assert_eq!(a.row(r), b.row(r));
    }
    assert_ne!(a.row(5), b.row(5));
}

#[test]
fn every_prompt_slot_influences_the_first_answer() {
    for seed in 0..5 {
        let (dec, mut store) = small(false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let id = store.id("test.prompt").unwrap();
        store.get_mut(id).value = Tensor::from_vec(3, 8, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let logits = |store: &ParamStore| {
            let mut g = Graph::inference(store);
            let p = g.param_named("test.prompt").unwrap();
            let h = dec.hidden(&mut g, p, &[9, BOS]).unwrap();
            let l = dec.logits_at(&mut g, h, &[4]).unwrap();
            g.value(l).clone()
        };
        let base = logits(&store);
        for slot in 0..3 {
            let mut s = store.clone();
            s.get_mut(id).value.row_mut(slot)[0] += 0.5;
            assert_ne!(logits(&s), base, "slot {slot}");
        }
    }
}
