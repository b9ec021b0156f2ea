use dmp_coupling::config::RunConfig;
use dmp_coupling::eval::{run_multi_setting, KindSelection};
use dmp_coupling::pipeline::generate;

#[test]
#[ignore]
fn multi_hits() {
    let cfg = RunConfig::default();
    let data = generate(&cfg).unwrap();
    let (report, _) = run_multi_setting(&data, &cfg, &KindSelection::All).unwrap();
    for r in &report.rows {
        if r.hit || !r.converged {
            let demo_sd = data
                .pairs
                .iter()
                .filter(|(_, s)| s.id == r.setting_id)
                .map(|(d, s)| {
                    d.samples
                        .iter()
                        .map(|x| s.signed_distance(&x.pos))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::INFINITY, f64::min);
            println!(
                "HIT {} min_sd={:+.4} demo_min_sd={:+.4} final={:.4}",
                r.setting_id, r.min_signed_distance, demo_sd, r.final_goal_dist
            );
        }
    }
}
