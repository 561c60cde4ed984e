use scout_core::config::{ExperimentConfig, Preset};
use scout_core::corpus::{build_corpus, Corpus, CorpusConfig};
use scout_core::nn::{read_checkpoint, write_checkpoint};
use scout_core::policy::{Actor, FeatureLayout, Vocabulary};
use scout_core::Error;

#[test]
fn corpus_file_round_trip() {
    let corpus = build_corpus(&CorpusConfig::new(4, 250, 6, 8, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.txt");
    corpus.write_to(&path).unwrap();
    let back = Corpus::read_from(&path).unwrap();
    assert_eq!(back, corpus);
    back.validate().unwrap();
}

#[test]
fn missing_corpus_file_names_the_path() {
    let err = Corpus::read_from(std::path::Path::new("/no/such/corpus.txt")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/no/such/corpus.txt"));
}

#[test]
fn actor_checkpoint_round_trip() {
    let cfg = ExperimentConfig::preset(Preset::Toy);
    let layout = FeatureLayout::from_env(&cfg.env);
    let vocab = Vocabulary {
        n_directions: cfg.policy.n_directions,
        n_slots: cfg.env.l_unexpanded,
    };
    let actor = Actor::new(
        layout.len(),
        cfg.policy.hidden,
        vocab,
        cfg.env.max_calls,
        17,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("actor.ckpt");
    write_checkpoint(&path, &actor.params, 42).unwrap();
    let (params, step) = read_checkpoint(&path).unwrap();
    assert_eq!(step, 42);
    assert_eq!(params.checksum(), actor.params.checksum());
    let back = Actor::from_params(
        layout.len(),
        cfg.policy.hidden,
        vocab,
        cfg.env.max_calls,
        params.clone(),
    )
    .unwrap();
    assert_eq!(back.params, actor.params);
    assert!(Actor::from_params(
        layout.len(),
        cfg.policy.hidden + 1,
        vocab,
        cfg.env.max_calls,
        params
    )
    .is_err());
}

#[test]
fn config_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    std::fs::write(&path, "[train]\ngama = 0.9\n").unwrap();
    match ExperimentConfig::from_file(Preset::Toy, &path).unwrap_err() {
        Error::UnknownKey { key, suggestion } => {
            assert_eq!(key, "gama");
            assert_eq!(suggestion.as_deref(), Some("gamma"));
        }
        other => panic!("unexpected {other}"),
    }
    std::fs::write(&path, "[train]\ngamma = 1.5\n").unwrap();
    assert!(matches!(
        ExperimentConfig::from_file(Preset::Toy, &path),
        Err(Error::Config { .. })
    ));
}
