use std::fmt::Write;

use crate::vmem::VirtAddr;

pub const BYTES_PER_LINE: usize = 16;
const HEX_WIDTH: usize = BYTES_PER_LINE * 3 + 1;

fn printable(b: Option<u8>) -> char {
    match b {
        Some(b @ 0x20..=0x7e) => b as char,
        _ => '.',
    }
}

/// Renders bytes 16 to a line: address, hex (`XX` when unknown), and an ASCII gutter.
///
/// ```text
/// 1000: 44 6f 6c 70 68 69 6e 31  38 XX XX XX XX XX XX XX |Dolphin18.......|
/// ```
pub fn format_hexdump(bytes: &[Option<u8>], base: VirtAddr) -> String {
    let mut out = String::new();
    for (n, line) in bytes.chunks(BYTES_PER_LINE).enumerate() {
        let addr = base.get().wrapping_add((n * BYTES_PER_LINE) as u64);
        let mut hex = String::with_capacity(HEX_WIDTH);
        for (i, b) in line.iter().enumerate() {
            if i == 8 {
                hex.push(' ');
            }
            match b {
                Some(b) => write!(hex, "{b:02x} ").unwrap(),
                None => hex.push_str("XX "),
            }
        }
        let gutter: String = line.iter().map(|b| printable(*b)).collect();
        writeln!(out, "{addr:08x}: {hex:<HEX_WIDTH$}|{gutter}|").unwrap();
    }
    out
}

/// Reads a dump back into its base address and bytes. Returns `None` on malformed input.
pub fn parse_hexdump(text: &str) -> Option<(Option<VirtAddr>, Vec<Option<u8>>)> {
    let mut base = None;
    let mut bytes = Vec::new();
    for line in text.lines() {
        let (addr, rest) = line.split_once(": ")?;
        let addr = u64::from_str_radix(addr, 16).ok()?;
        if base.is_none() {
            base = Some(VirtAddr(addr));
        }
        let hex = rest.get(..HEX_WIDTH)?;
        for tok in hex.split_whitespace() {
            bytes.push(match tok {
                "XX" => None,
                t if t.len() == 2 => Some(u8::from_str_radix(t, 16).ok()?),
                _ => return None,
            });
        }
    }
    Some((base, bytes))
}

/// Two columns, `page,cycles`, one row per probe page.
pub fn latency_csv(latencies: &[u64]) -> String {
    let mut out = String::from("page,cycles\n");
    for (page, cycles) in latencies.iter().enumerate() {
        writeln!(out, "{page},{cycles}").unwrap();
    }
    out
}
