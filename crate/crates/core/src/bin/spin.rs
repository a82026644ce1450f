//! Busy loop with a known instruction count: two instructions per
//! iteration (`dec` and `jnz`).
//!
//! Usage: `perfrig-spin ITERATIONS`

fn spin(iterations: u64) {
    if iterations == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    unsafe {
        std::arch::asm!(
            "2:",
            "dec {n}",
            "jnz 2b",
            n = inout(reg) iterations => _,
            options(nomem, nostack),
        );
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        let mut n = iterations;
        while std::hint::black_box(n) != 0 {
            n -= 1;
        }
    }
}

fn main() {
    let arg = std::env::args().nth(1).unwrap_or_else(|| "100000000".into());
    let Ok(n) = arg.parse::<u64>() else {
        eprintln!("usage: perfrig-spin ITERATIONS");
        std::process::exit(2);
    };
    spin(n);
}
