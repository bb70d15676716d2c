//! Soft state value of a history under a policy and a critic, estimated with
//! one and with many sampled actions.

use timegci::critic::{soft_state_value, soft_state_value_k, CriticNet, TargetCritic};
use timegci::policy::PolicyNet;

fn main() -> timegci::Result<()> {
    let mut rng = timegci::seeded_rng(0);
    let policy = PolicyNet::new(2, 8, &mut rng);
    let target = TargetCritic::from_online(&CriticNet::new(2, 8, &mut rng));
    let prefix = [0.3, 0.7, 0.5, 0.5];
    let one = soft_state_value(&target, &policy, &prefix, 5, 0.2, &mut rng)?;
    let (many, se) = soft_state_value_k(&target, &policy, &prefix, 5, 0.2, 10_000, &mut rng)?;
    println!("one action {one:+.4}; 10000 actions {many:+.4} ± {se:.4}");
    Ok(())
}
