//! Short fixed-seed TD3 run at the default schedule.

use transpath::tpsrl::{train_td3, Env, GameRecord, Td3Hyper, TrainOptions, TrainReport};

#[test]
fn rolling_success_does_not_trend_down_over_500_games() {
    let hyper = Td3Hyper {
        n_games: 500,
        ..Td3Hyper::default()
    };
    let mut rolling = Vec::new();
    let mut record = |_: &GameRecord, r: &TrainReport| rolling.push(r.rolling_success(100));
    let (_, report) = train_td3(
        &Env::default(),
        &hyper,
        0,
        TrainOptions {
            on_game: Some(&mut record),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(report.games.len(), 500);
    assert_eq!(report.blow_ups, 0);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&rolling[..100]);
    let last = mean(&rolling[400..]);
    assert!(last >= first, "first quintile {first}, last quintile {last}");
}
