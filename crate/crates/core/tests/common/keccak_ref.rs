//! Straight-line Keccak-256 built from the permutation definition, used to
//! cross-check the hashing crate. Slow and simple on purpose.

const ROUNDS: usize = 24;
const RATE: usize = 136;

fn round_constants() -> [u64; ROUNDS] {
    // LFSR x^8 + x^6 + x^5 + x^4 + 1
    let mut rc = [0u64; ROUNDS];
    let mut r: u8 = 1;
    for c in rc.iter_mut() {
        for j in 0..7 {
            if r & 1 == 1 {
                *c ^= 1u64 << ((1usize << j) - 1);
            }
            r = if r & 0x80 != 0 { (r << 1) ^ 0x71 } else { r << 1 };
        }
    }
    rc
}

fn rotation_offsets() -> [[u32; 5]; 5] {
    let mut off = [[0u32; 5]; 5];
    let (mut x, mut y) = (1usize, 0usize);
    for t in 0..24u32 {
        off[x][y] = ((t + 1) * (t + 2) / 2) % 64;
        let nx = y;
        let ny = (2 * x + 3 * y) % 5;
        x = nx;
        y = ny;
    }
    off
}

#[allow(clippy::needless_range_loop)]
fn permute(a: &mut [[u64; 5]; 5]) {
    let rc = round_constants();
    let rot = rotation_offsets();
    for round in rc {
        let mut c = [0u64; 5];
        for x in 0..5 {
            c[x] = a[x][0] ^ a[x][1] ^ a[x][2] ^ a[x][3] ^ a[x][4];
        }
        for x in 0..5 {
            let d = c[(x + 4) % 5] ^ c[(x + 1) % 5].rotate_left(1);
            for y in 0..5 {
                a[x][y] ^= d;
            }
        }
        let mut b = [[0u64; 5]; 5];
        for x in 0..5 {
            for y in 0..5 {
                b[y][(2 * x + 3 * y) % 5] = a[x][y].rotate_left(rot[x][y]);
            }
        }
        for x in 0..5 {
            for y in 0..5 {
                a[x][y] = b[x][y] ^ (!b[(x + 1) % 5][y] & b[(x + 2) % 5][y]);
            }
        }
        a[0][0] ^= round;
    }
}

pub fn keccak256_ref(input: &[u8]) -> [u8; 32] {
    let mut padded = input.to_vec();
    padded.push(0x01);
    while padded.len() % RATE != 0 {
        padded.push(0);
    }
    let last = padded.len() - 1;
    padded[last] |= 0x80;

    let mut state = [[0u64; 5]; 5];
    for block in padded.chunks(RATE) {
        for (i, lane) in block.chunks(8).enumerate() {
            let mut w = [0u8; 8];
            w.copy_from_slice(lane);
            state[i % 5][i / 5] ^= u64::from_le_bytes(w);
        }
        permute(&mut state);
    }
    let mut out = [0u8; 32];
    for i in 0..4 {
        out[i * 8..i * 8 + 8].copy_from_slice(&state[i % 5][i / 5].to_le_bytes());
    }
    out
}
