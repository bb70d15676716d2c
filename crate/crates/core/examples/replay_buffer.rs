//! The bounded trajectory buffer: oldest entries are evicted first, and
//! histories are drawn uniformly over stored trajectories and cut-off steps.

use timegci::data::Trajectory;
use timegci::replay::ReplayBuffer;

fn main() -> timegci::Result<()> {
    let mut buf = ReplayBuffer::new(4, 3, 1)?;
    for id in 0..6 {
        buf.push(Trajectory::new(3, 1, vec![id as f64; 3])?)?;
    }
    let ids: Vec<f64> = buf.iter().map(|t| t.get(0, 0)).collect();
    println!("stored after six pushes: {ids:?}");

    let mut rng = timegci::seeded_rng(0);
    for h in buf.sample_histories(5, &mut rng)? {
        println!(
            "trajectory {} cut at step {} (prefix {:?}, action {:?}, terminal {})",
            h.trajectory.get(0, 0),
            h.cutoff,
            h.prefix(),
            h.action(),
            h.is_terminal()
        );
    }
    Ok(())
}
