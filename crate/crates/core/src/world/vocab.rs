//! Synthetic instruction vocabulary.

pub const VOCAB_SIZE: usize = 64;
/// Sentence-summary token; every instruction starts with it.
pub const TOKEN_SUMMARY: usize = 0;
pub const TOKEN_STOP: usize = 1;
pub const DIRECTION_BASE: usize = 2;
pub const NUM_DIRECTIONS: usize = 8;
pub const LANDMARK_BASE: usize = DIRECTION_BASE + NUM_DIRECTIONS;
pub const NUM_LANDMARKS: usize = VOCAB_SIZE - LANDMARK_BASE;
/// Direction token followed by the destination landmark token.
pub const TOKENS_PER_HOP: usize = 2;
pub const APPEARANCE_DIM: usize = 8;

/// Compass sector (0 = east, counter-clockwise in 45° steps) of a heading.
pub fn direction_sector(heading: f64) -> usize {
    let step = std::f64::consts::FRAC_PI_4;
    ((heading / step).round() as i64).rem_euclid(NUM_DIRECTIONS as i64) as usize
}

pub fn direction_token(heading: f64) -> usize {
    DIRECTION_BASE + direction_sector(heading)
}

pub fn landmark_token(landmark: usize) -> usize {
    LANDMARK_BASE + landmark
}
