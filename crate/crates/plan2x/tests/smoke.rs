use plan2x::agent::{explore, AgentConfig, ExploreVariant};
use plan2x::parallel::par_map;

#[test]
fn free_nats_sweep() {
    let cases = vec![0.5_f64, 3.0_f64];
    let outs = par_map(cases, |fn_| {
        let mut cfg = AgentConfig::default();
        cfg.episodes = 40;
        cfg.free_nats = fn_;
        (fn_, explore(&cfg, 0, ExploreVariant::Plan2Explore).unwrap())
    });
    for (fn_, out) in &outs {
        println!("=== free_nats {fn_}");
        for m in out.metrics.iter().step_by(8) {
            println!(
                "  ep {:>3} cov {:.3} kl {:.2} gap {:.3} dis {:9.6}",
                m.episode, m.coverage_entropy, m.kl, m.prior_posterior_gap,
                m.probe_disagreement.unwrap_or(f64::NAN)
            );
        }
        let right: usize = out.dataset.episodes.iter().rev().take(10)
            .flat_map(|ep| ep.observations.iter()).filter(|o| o[0] > 1.0).count();
        println!("  final cov {:.3}, right-room obs in last 10 eps: {right}", out.metrics.last().unwrap().coverage_entropy);
    }
}
