use legible_core::greedy_policy;
use legible_core::mdp::{solve, SolverOptions};
use legible_core::pursuit::{goal_mdp_pursuit, sample_scenario, PursuitConfig};
use legible_core::seeds;

#[test]
fn greedy_model_rollouts_capture_the_target() {
    let cfg = PursuitConfig::standard(10);
    let model = goal_mdp_pursuit(&cfg, false).unwrap();
    let q = solve(&model.mdp, &SolverOptions::default(), None).unwrap().q;
    let policy = greedy_policy(&q);
    let mut captured = 0;
    for i in 0..1000 {
        let sc = sample_scenario(seeds::derive(0x524f4c4c, i), &cfg);
        let target = sc.preys[sc.sequence[0]];
        let mut x = model.state(sc.hunters[0], sc.hunters[1], target).unwrap();
        for _ in 0..cfg.step_limit {
            x = model.mdp.successor(x, policy.action(x)).unwrap();
            if x == model.absorbing() {
                captured += 1;
                break;
            }
        }
    }
    assert!(captured >= 990, "{captured} of 1000 captured");
}
