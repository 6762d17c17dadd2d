use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uavtraj::channel::ChannelParams;
use uavtraj::ddpg::{train, TrainConfig, Trainer};
use uavtraj::env::{generate_map, EnvParams, UrbanMap};
use uavtraj::mdp::{Action, MdpConfig, UavEnv};
use uavtraj::precoding::LinkConfig;

fn map() -> UrbanMap {
    generate_map(&EnvParams { area_side: 400.0, num_gts: 4, ..Default::default() }, 8, 9).unwrap()
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        episodes: 6,
        hidden_width: 16,
        batch_size: 16,
        warmup: 60,
        buffer_capacity: 2000,
        ..Default::default()
    }
}

#[test]
fn episodes_replay_bit_exactly() {
    let map = map();
    let mdp = MdpConfig { max_steps: 40, ..Default::default() };
    let run = || {
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), mdp.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        env.reset(123);
        while !env.is_done() {
            env.step(Action::random(&mut rng, 20.0)).unwrap();
        }
        env.records().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn map_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = map();
    let path = dir.path().join("map.toml");
    m.save(&path).unwrap();
    assert_eq!(UrbanMap::load(&path).unwrap(), m);
}

#[test]
fn training_is_reproducible_and_checkpoints_resume() {
    let map = map();
    let mdp = MdpConfig { max_steps: 40, ..Default::default() };
    let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), mdp.clone());
    let (a, curve_a) = train(&mut env, tiny_train(), 5).unwrap();
    let (_, curve_b) = train(&mut env, tiny_train(), 5).unwrap();
    assert_eq!(curve_a, curve_b);
    assert!(a.updates > 0);

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let resumed = Trainer::resume(dir.path(), &map, &mdp, tiny_train(), 5).unwrap();
    assert_eq!(resumed.next_episode, 6);
    assert_eq!(resumed.updates, a.updates);
    assert_eq!(resumed.agent.actor, a.agent.actor);
    assert_eq!(resumed.agent.critic_target, a.agent.critic_target);
    assert!(resumed.is_finished());

    let other = generate_map(&EnvParams { area_side: 400.0, num_gts: 6, ..Default::default() }, 8, 9).unwrap();
    assert!(Trainer::resume(dir.path(), &other, &mdp, tiny_train(), 5).is_err());
}
