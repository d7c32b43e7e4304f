use tensor::Tape;
use urolith::config::{GeneratorConfig, Modalities, ModelConfig};
use urolith::data::{generate_dataset, prepare, Prepared};
use urolith::model::{Input, Network};
use urolith::vtt::EhrStats;

fn toy_data() -> Vec<Prepared> {
    let g = GeneratorConfig { sample_count: 6, seed: 3, ..GeneratorConfig::default() };
    prepare(&generate_dataset(&g).unwrap(), 16, -400.0, 2000.0).unwrap()
}

#[test]
fn toy_forward_shapes() {
    let cfg = ModelConfig::default();
    let data = toy_data();
    let stats = EhrStats::fit(data.iter().map(|s| &s.ehr)).unwrap();
    let net = Network::new(&cfg, 0).unwrap();
    let tape = Tape::new();
    let bound = net.store.bind_frozen(&tape);
    let s = &data[0];
    let f = net.forward(&tape, &bound, Input { volume: &s.volume, ehr: &s.ehr, stats: &stats }).unwrap();
    assert_eq!(tape.shape(f.vision_tokens.unwrap()), vec![64, 48]);
    assert_eq!(tape.shape(f.ehr_tokens.unwrap()), vec![7, 48]);
    for z in f.taps.unwrap().z {
        assert_eq!(tape.shape(z), vec![64, 48]);
    }
    assert_eq!(tape.shape(f.seg_logits.unwrap()), vec![1, 16, 16, 16]);
    assert_eq!(tape.shape(f.cefr.unwrap()), vec![64, 48]);
    assert_eq!(tape.shape(f.msfr.unwrap()), vec![64, 48]);
    let p = tape.value(f.prob).item();
    assert!(p > 0.0 && p < 1.0);
}

#[test]
fn single_modality_variants() {
    let data = toy_data();
    let stats = EhrStats::fit(data.iter().map(|s| &s.ehr)).unwrap();
    let s = &data[1];
    for (m, segments) in [(Modalities::CtOnly, true), (Modalities::EhrOnly, false)] {
        let cfg = ModelConfig { modalities: m, ..ModelConfig::default() };
        let net = Network::new(&cfg, 1).unwrap();
        assert_eq!(net.segments(), segments);
        let tape = Tape::new();
        let bound = net.store.bind_frozen(&tape);
        let f = net.forward(&tape, &bound, Input { volume: &s.volume, ehr: &s.ehr, stats: &stats }).unwrap();
        assert_eq!(f.seg_logits.is_some(), segments);
        assert!(f.cefr.is_none() && f.msfr.is_none());
        assert_eq!(f.ehr_tokens.is_some(), !segments);
        let p = tape.value(f.prob).item();
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn wrong_volume_side_is_rejected() {
    let data = toy_data();
    let stats = EhrStats::fit(data.iter().map(|s| &s.ehr)).unwrap();
    let cfg = ModelConfig { volume_side: 8, ..ModelConfig::default() };
    let net = Network::new(&cfg, 0).unwrap();
    let tape = Tape::new();
    let bound = net.store.bind_frozen(&tape);
    let s = &data[0];
    assert!(net.forward(&tape, &bound, Input { volume: &s.volume, ehr: &s.ehr, stats: &stats }).is_err());
}

#[test]
fn initialisation_is_seeded() {
    let cfg = ModelConfig::default();
    let a = Network::new(&cfg, 5).unwrap().store.flatten();
    assert_eq!(a, Network::new(&cfg, 5).unwrap().store.flatten());
    assert_ne!(a, Network::new(&cfg, 6).unwrap().store.flatten());
}
