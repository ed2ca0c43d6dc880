//! Thin CLI over the experiment runner; see `cli_lab` for the real work.
fn main() {
    println!("amplab: experiment CLI (subcommands arrive with cli_lab)");
}
