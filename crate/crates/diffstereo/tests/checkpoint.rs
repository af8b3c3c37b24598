use diffstereo::checkpoint::{Checkpoint, CheckpointMeta};
use diffstereo::core::datapipe::{bicubic_downsample, synthetic_pair, Task};
use diffstereo::core::model::{self, Guide, ModelConfig, Profile};
use diffstereo::core::rng;

#[test]
fn saved_weights_restore_bit_identically() {
    let cfg = ModelConfig::new(Profile::Desk, Task::Sr4);
    let mut weights = model::init_stage1(&cfg, 3).unwrap();
    model::add_diffusion(&cfg, &mut weights, 3).unwrap();
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            profile: Profile::Desk,
            stage: 2,
            model: cfg.clone(),
            state: None,
            train: None,
        },
        tensors: weights.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(std::fs::read(&path).unwrap(), loaded.to_bytes().unwrap());

    let hq = synthetic_pair(16, 32, 2, 1, "s").unwrap();
    let lq = hq.map_views(|v| bicubic_downsample(v, 4)).unwrap();
    let run = |w| {
        let mut r = rng::for_sample(5, "s");
        model::restore(&cfg, w, &lq, Guide::Diffusion(&mut r)).unwrap()
    };
    let (a, b) = (run(&weights), run(&loaded.weights()));
    let bits = |t: &diffstereo::core::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.left), bits(&b.left));
    assert_eq!(bits(&a.right), bits(&b.right));
}
