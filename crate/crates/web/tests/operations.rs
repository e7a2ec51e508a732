use splitedge_web::{channel_curve, split_tradeoff, train_controller};

#[test]
fn rayleigh_curve() {
    let c = channel_curve(1.0, 1.0, 2.0, 41).unwrap();
    assert_eq!(c.h.len(), 41);
    for (h, l) in c.h.iter().zip(&c.loss) {
        assert!((l - (1.0 - (-h * h).exp())).abs() < 1e-6);
    }
    // Rayleigh density 2h·exp(-h²)
    for (h, f) in c.h.iter().zip(&c.pdf) {
        assert!((f - 2.0 * h * (-h * h).exp()).abs() < 1e-9);
    }
    assert!(channel_curve(1.0, 1.0, 0.0, 10).is_err());
}

#[test]
fn tradeoff_moves_with_the_channel() {
    let clean = split_tradeoff(0.0, 0.0, 1.0).unwrap();
    assert_eq!(clean.rows.len(), 7);
    assert!(clean.rows.windows(2).all(|w| w[0].flops < w[1].flops));
    // nothing to protect against: keep the device load minimal
    assert_eq!(clean.best_p, 1);
    let noisy = split_tradeoff(0.3, 0.5, 0.1).unwrap();
    assert_eq!(noisy.best_p, 7);
    assert!(noisy.rows[0].ppl > noisy.rows[6].ppl);
    assert!(split_tradeoff(0.99, 0.0, 1.0).is_err());
}

#[test]
fn short_training_run() {
    let r = train_controller("A", 2_000, 3, 1.0).unwrap();
    assert_eq!(r.episode_end.last(), Some(&2_000));
    assert_eq!(r.reward.len(), r.smoothed.len());
    assert_eq!(r.final_p_counts.iter().sum::<usize>(), 200);
    assert_eq!(r.final_p_counts[0], 0);
    assert!(train_controller("Z", 100, 0, 1.0).is_err());
    assert!(train_controller("A", 0, 0, 1.0).is_err());
}
