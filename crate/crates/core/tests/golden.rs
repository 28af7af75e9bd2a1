use meltsim::harness::{format_hexdump, parse_hexdump};
use meltsim::vmem::VirtAddr;

/// A saved-password region with gaps where the side channel returned nothing.
const DUMP: &str = "
    XX XX XX XX XX XX XX XX XX XX XX XX XX XX XX 81
    12 XX e0 81 19 XX e0 81 44 6f 6c 70 68 69 6e 31
    38 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5
    70 52 b8 6b 96 7f XX XX XX XX XX XX XX XX XX XX
    XX XX XX XX 4a XX XX XX XX XX XX XX XX XX XX XX
    XX XX XX XX XX XX XX XX XX XX e0 81 69 6e 73 74
    61 5f 30 32 30 33 e5 e5 e5 e5 e5 e5 e5 e5 e5 e5
    30 b4 18 7d 28 7f XX XX XX";

fn buffer() -> Vec<Option<u8>> {
    DUMP.split_whitespace().map(|t| u8::from_str_radix(t, 16).ok()).collect()
}

#[test]
fn dolphin_dump_matches_golden() {
    let got = format_hexdump(&buffer(), VirtAddr(0xf94b76e0));
    let want = include_str!("golden/dolphin.hexdump");
    assert_eq!(got, want, "\n{got}");
    assert!(got.contains("|........Dolphin1|"));
}

#[test]
fn golden_parses_back() {
    let (base, bytes) = parse_hexdump(include_str!("golden/dolphin.hexdump")).unwrap();
    assert_eq!(base, Some(VirtAddr(0xf94b76e0)));
    assert_eq!(bytes, buffer());
}
