//! Parameter accounting for the published architectures.
//!
//!     cargo run --release --example count_parameters

use pyratten::network::{count_params, init_params, NetworkConfig};

fn main() {
    let full = NetworkConfig::default();
    let small = NetworkConfig::small();
    println!(
        "PANet   (80 blocks, attention after block 40): {:>9} parameters",
        count_params(&full)
    );
    println!(
        "PANet-S ( 8 blocks, attention after block  4): {:>9} parameters",
        count_params(&small)
    );

    // The analytic count matches the materialized store exactly.
    let store = init_params(&small, 0).expect("valid config");
    assert_eq!(store.num_scalars(), count_params(&small));
    println!(
        "\nPANet-S store: {} named tensors, {} scalars (matches the analytic count)",
        store.len(),
        store.num_scalars()
    );

    let per_block = 2 * (64 * 64 * 9 + 64);
    println!("\nbreakdown at 64 channels:");
    println!("  per residual block: {per_block}");
    println!("  head 3->64:         {}", 64 * 3 * 9 + 64);
    println!("  body-end 64->64:    {}", 64 * 64 * 9 + 64);
    println!("  tail 64->3:         {}", 3 * 64 * 9 + 3);
    println!(
        "  attention (f, g 64->32; theta 64->64): {}",
        2 * (64 * 32 + 32) + 64 * 64 + 64
    );
}
