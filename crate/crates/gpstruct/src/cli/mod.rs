//! Command-line front end (placeholder).

pub fn run() -> i32 {
    0
}
