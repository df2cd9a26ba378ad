//! The remaining-fraction curve: flat warm-up, cubic decay, flat tail.

use losparse::PruneSchedule;

fn main() -> losparse::Result<()> {
    let schedule = PruneSchedule::new(100, 10, 30, 0.2)?;
    for t in (0..=100).step_by(10) {
        let p = schedule.remaining_fraction(t)?;
        println!("t = {t:>3}  p_t = {p:.4}  {}", "#".repeat((p * 40.0).round() as usize));
    }
    Ok(())
}
