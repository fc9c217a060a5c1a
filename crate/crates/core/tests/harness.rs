mod common;

use mxctc::autodiff::Tensor;
use mxctc::harness::data::{acoustic_tokens, generate_corpus, Templates};
use mxctc::harness::model::Head;
use mxctc::harness::*;
use mxctc::params::{ParamStore, Parameterized};
use mxctc::vocab::{Scheme, OOV_UNIT};
use mxctc::Error;
use proptest::prelude::*;
use rand::SeedableRng;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::parse(
        "layers = 1\ncells = 8\nprojection_dim = 8\nfeature_dim = 6\n\
         train_utterances = 60\ntest_utterances = 10\nfrequent_words = 5\noov_words = 3\n",
    )
    .unwrap();
    cfg.epochs = 2;
    cfg
}

fn spec(cfg: &RunConfig) -> SyntheticSpec {
    SyntheticSpec::from_config(cfg)
}

#[test]
fn same_seed_gives_identical_data() {
    let s = spec(&small_config());
    assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
    let mut other = s.clone();
    other.seed += 1;
    assert_ne!(generate(&s).unwrap().train, generate(&other).unwrap().train);
}

#[test]
fn noiseless_features_are_template_concatenations() {
    let mut s = spec(&small_config());
    s.noise_std = 0.0;
    let data = generate(&s).unwrap();
    let templates = Templates::new(&s);
    for u in data.train.iter().take(10) {
        let tokens = acoustic_tokens(&u.words);
        let mut expected = Vec::new();
        for t in &tokens {
            expected.extend_from_slice(templates.get(t).unwrap().data());
        }
        assert_eq!(u.features.data(), expected.as_slice());
    }
}

#[test]
fn five_tokens_of_three_frames_give_fifteen_frames() {
    let s = spec(&small_config());
    let templates = Templates::new(&s);
    let mut rng = common::rng(0);
    let f = templates.render(&["$", "a", "b", "$", "c"], 0.1, &mut rng).unwrap();
    assert_eq!(f.shape(), &[15, s.feature_dim]);
}

#[test]
fn distinct_tokens_get_distinct_templates() {
    let templates = Templates::new(&spec(&small_config()));
    let letters: Vec<String> = ('a'..='z').map(String::from).chain(["$".to_string()]).collect();
    for (i, a) in letters.iter().enumerate() {
        for b in &letters[i + 1..] {
            assert_ne!(templates.get(a), templates.get(b));
        }
    }
}

#[test]
fn dataset_files_roundtrip() {
    let data = generate_dataset(&spec(&small_config()), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let index = dir.path().join("train.tsv");
    write_dataset(&index, &data).unwrap();
    assert_eq!(read_dataset(&index).unwrap(), data);
}

fn single_utterance() -> Vec<Utterance> {
    let mut cfg = small_config();
    cfg.noise_std = 0.0;
    let mut data = generate_dataset(&spec(&cfg), 1).unwrap();
    data[0].words = vec!["ab".into()];
    let s = spec(&cfg);
    data[0].features = Templates::new(&s)
        .render(&acoustic_tokens(&data[0].words), 0.0, &mut common::rng(0))
        .unwrap();
    data
}

#[test]
fn overfits_one_utterance() {
    let mut cfg = small_config();
    cfg.learning_rate = 0.05;
    cfg.batch_size = 1;
    cfg.epochs = 400;
    cfg.min_count = 1;
    let data = single_utterance();
    let out = train_run(&cfg, &data, &mut |_, _, loss, _| loss > 1e-3).unwrap();
    let corpus: Vec<Vec<String>> = data.iter().map(|u| u.words.clone()).collect();
    let (vocab, _) = build_vocabularies(&cfg, &corpus).unwrap();
    let examples = make_examples(&vocab, None, &data).unwrap();
    let loss = dataset_loss(&out.checkpoint.model, &examples).unwrap();
    assert!(loss < 1e-2, "final loss {loss} after {} epochs", out.losses.len());
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut cfg = small_config();
    cfg.learning_rate = 0.0;
    cfg.epochs = 2;
    let data = generate(&spec(&cfg)).unwrap();
    let mut initial = None;
    let out = train_run(&cfg, &data.train, &mut |_, e, _, m| {
        if e == 1 && initial.is_none() {
            initial = Some(m.clone());
        }
        true
    })
    .unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let fresh = Model::new(&cfg, cfg.feature_dim, out.checkpoint.vocab.len(), None, &mut rng).unwrap();
    assert_eq!(ParamStore::collect(&out.checkpoint.model), ParamStore::collect(&fresh));
    assert_eq!(initial.unwrap(), fresh);
}

fn hybrid_config() -> RunConfig {
    let mut cfg = small_config();
    cfg.set("mode", "hybrid").unwrap();
    cfg.set("scheme", "word-oov").unwrap();
    cfg.set("layers", "2").unwrap();
    cfg.epochs = 1;
    cfg.letter_epochs = 2;
    cfg.learning_rate = 0.05;
    cfg
}

#[test]
fn hybrid_second_stage_freezes_the_word_path() {
    let cfg = hybrid_config();
    let data = generate(&spec(&cfg)).unwrap();
    let mut after_words = None;
    let out = train_run(&cfg, &data.train, &mut |stage, _, _, m| {
        if stage == Stage::Main {
            after_words = Some(ParamStore::collect(m));
        }
        true
    })
    .unwrap();
    let before = after_words.unwrap();
    let after = ParamStore::collect(&out.checkpoint.model);
    let mut moved = 0;
    for (name, t) in after.iter() {
        let old = before.get(name).unwrap();
        if name.starts_with("letters/") {
            moved += usize::from(old != t);
        } else {
            assert_eq!(old.data(), t.data(), "{name} changed in the letter stage");
        }
    }
    assert!(moved > 0);
}

#[test]
fn hybrid_checkpoint_decodes_in_every_compatible_mode() {
    let cfg = hybrid_config();
    let data = generate(&spec(&cfg)).unwrap();
    let out = train_run(&cfg, &data.train, &mut |_, _, _, _| true).unwrap();
    let ck = out.checkpoint;
    let f = &data.test[0].features;
    assert!(decode_utterance(&ck, f, DecodeMode::Hybrid).is_ok());
    assert!(decode_utterance(&ck, f, DecodeMode::Word).is_ok());
    assert!(decode_utterance(&ck, f, DecodeMode::Letters).is_err());
    assert!(decode_utterance(&ck, f, DecodeMode::Mixed).is_err());
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back, ck);
}

#[test]
fn loss_decreases_on_four_noiseless_utterances() {
    let mut cfg = small_config();
    cfg.noise_std = 0.0;
    let data = generate_dataset(&spec(&cfg), 4).unwrap();
    cfg.min_count = 1;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.01;
    cfg.epochs = 40;
    let out = train_run(&cfg, &data, &mut |_, _, _, _| true).unwrap();
    for w in out.losses.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "loss rose from {} to {}", w[0], w[1]);
    }
    assert!(out.losses.last().unwrap() < &out.losses[0]);
}

/// A plain-head model whose output bias puts all mass on `unit`.
fn constant_checkpoint(cfg: &RunConfig, unit: usize) -> Checkpoint {
    let data = generate(&spec(cfg)).unwrap();
    let corpus = data.corpus.train.clone();
    let (vocab, letter_vocab) = build_vocabularies(cfg, &corpus).unwrap();
    let mut rng = common::rng(1);
    let mut model = Model::new(cfg, cfg.feature_dim, vocab.len(), None, &mut rng).unwrap();
    let Head::Plain(out) = &mut model.head else {
        unreachable!()
    };
    out.weight.data_mut().fill(0.0);
    out.bias.data_mut().fill(0.0);
    out.bias.data_mut()[unit] = 10.0;
    Checkpoint {
        config: cfg.clone(),
        vocab,
        letter_vocab,
        model,
    }
}

#[test]
fn all_blank_output_decodes_to_nothing() {
    let cfg = small_config();
    let ck = constant_checkpoint(&cfg, 0);
    let f = Tensor::zeros(&[9, cfg.feature_dim]);
    assert!(decode_utterance(&ck, &f, DecodeMode::Letters).unwrap().is_empty());
}

#[test]
fn word_mode_returns_units_verbatim() {
    let mut cfg = small_config();
    cfg.set("mode", "word").unwrap();
    cfg.set("scheme", "word-oov").unwrap();
    let probe = constant_checkpoint(&cfg, 0);
    let oov = probe.vocab.id(OOV_UNIT).unwrap();
    let ck = constant_checkpoint(&cfg, oov);
    let f = Tensor::zeros(&[9, cfg.feature_dim]);
    assert_eq!(decode_utterance(&ck, &f, DecodeMode::Word).unwrap(), vec![OOV_UNIT]);
    assert!(decode_utterance(&ck, &f, DecodeMode::Mixed).is_err());
}

#[test]
fn decoding_is_deterministic() {
    let cfg = small_config();
    let data = generate(&spec(&cfg)).unwrap();
    let out = train_run(&cfg, &data.train, &mut |_, _, _, _| true).unwrap();
    let a = decode_all(&out.checkpoint, &data.test, DecodeMode::Letters).unwrap();
    let b = decode_all(&out.checkpoint, &data.test, DecodeMode::Letters).unwrap();
    assert_eq!(a, b);
}

fn trained(cfg: &RunConfig) -> Checkpoint {
    let data = generate(&spec(cfg)).unwrap();
    train_run(cfg, &data.train, &mut |_, _, _, _| true).unwrap().checkpoint
}

#[test]
fn checkpoints_roundtrip_byte_for_byte() {
    let mut configs = vec![small_config()];
    let mut att = small_config();
    att.set("head", "attention").unwrap();
    att.set("scoring", "hybrid").unwrap();
    att.set("plm", "on").unwrap();
    att.set("coma", "on").unwrap();
    att.set("tau", "1").unwrap();
    att.epochs = 1;
    configs.push(att);
    let mut sa = small_config();
    sa.set("head", "self-attention").unwrap();
    sa.set("d_k", "4").unwrap();
    sa.set("d_v", "4").unwrap();
    sa.set("heads", "2").unwrap();
    sa.epochs = 1;
    configs.push(sa);
    let mut wp = small_config();
    wp.set("mode", "mixed").unwrap();
    wp.set("scheme", "wordpiece").unwrap();
    wp.set("wordpiece_size", "40").unwrap();
    configs.push(wp);

    let dir = tempfile::tempdir().unwrap();
    for cfg in configs {
        let ck = trained(&cfg);
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let again = dir.path().join("b.ckpt");
        save_checkpoint(&loaded, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        assert_eq!(loaded, ck);
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let ck = constant_checkpoint(&small_config(), 0);
    let bytes = ck.to_bytes();
    let mut bad = bytes.clone();
    bad[3] ^= 0xff;
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Checkpoint { offset: 0, .. })
    ));
    for cut in [4, 12, 40, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint { .. })),
            "cut {cut}"
        );
    }
}

#[test]
fn named_tensor_survives_roundtrip() {
    let (k, n) = (5, 3);
    let mut rng = common::rng(7);
    let t = Tensor::uniform(&[k, n], 1.0, &mut rng);
    let mut tensors = ParamStore::new();
    tensors.insert("attention/W_soft", t.clone());
    let raw = RawCheckpoint {
        text: String::new(),
        tensors,
    };
    let bytes = raw.to_bytes();
    // magic, text length, tensor count, name length + name, rank, extents, values
    assert_eq!(bytes.len(), 8 + 8 + 8 + 8 + 16 + 8 + 16 + 8 * k * n);
    let back = RawCheckpoint::from_bytes(&bytes).unwrap();
    let got = back.tensors.get("attention/W_soft").unwrap();
    assert_eq!(got.shape(), &[k, n]);
    assert!(got.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn config_echo_is_complete() {
    let mut cfg = small_config();
    cfg.set("scheme", "mixed-double").unwrap();
    cfg.set("mode", "mixed").unwrap();
    let text = cfg.to_text();
    assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    for key in ["seed", "mode", "tau", "heads", "plm", "coma", "scheme"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
    }
}

#[test]
fn vocabularies_follow_the_mode() {
    let mut cfg = small_config();
    let corpus = generate_corpus(&spec(&cfg)).unwrap().train;
    let (v, l) = build_vocabularies(&cfg, &corpus).unwrap();
    assert_eq!(v.scheme(), Scheme::Letters(1));
    assert!(l.is_none());
    cfg.set("mode", "hybrid").unwrap();
    cfg.set("scheme", "word-oov").unwrap();
    let (v, l) = build_vocabularies(&cfg, &corpus).unwrap();
    assert_eq!(v.scheme(), Scheme::WordOov);
    assert_eq!(l.unwrap().scheme(), Scheme::Letters(1));
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]).prop_map(String::from), 0..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wer_is_zero_exactly_when_all_pairs_match(
        pairs in prop::collection::vec((sentence(), sentence()), 1..5),
        shift in 0usize..5,
    ) {
        let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.0.clone()).collect();
        let hyps: Vec<Vec<String>> = pairs.iter().map(|p| p.1.clone()).collect();
        let Ok(w) = evaluate_wer(&refs, &hyps) else {
            prop_assert!(refs.iter().all(Vec::is_empty));
            return Ok(());
        };
        prop_assert_eq!(w == 0.0, refs == hyps);
        let mut perm: Vec<usize> = (0..refs.len()).collect();
        perm.rotate_left(shift % refs.len());
        let pr: Vec<_> = perm.iter().map(|&i| refs[i].clone()).collect();
        let ph: Vec<_> = perm.iter().map(|&i| hyps[i].clone()).collect();
        prop_assert_eq!(evaluate_wer(&pr, &ph).unwrap(), w);
    }
}

#[test]
fn trained_models_parameter_names_are_prefixed() {
    let ck = constant_checkpoint(&small_config(), 0);
    let mut names = Vec::new();
    ck.model.visit("", &mut |n, _| names.push(n.to_string()));
    assert!(
        names.iter().all(|n| n.starts_with("enc/") || n.starts_with("head/")),
        "{names:?}"
    );
}
