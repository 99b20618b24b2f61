mod common;

use evsim::readout::{accumulate, deserialize_events, read_binary_header, serialize_events, HEADER_LEN, RECORD_LEN};
use evsim::{Error, Event, EventFormat, Polarity};
use proptest::prelude::*;

fn ev(t_us: u64, x: u16, y: u16, on: bool) -> Event {
    Event {
        t_us,
        x,
        y,
        polarity: if on { Polarity::On } else { Polarity::Off },
    }
}

#[test]
fn empty_and_single_event_encodings() {
    let bin = serialize_events(&[], EventFormat::Binary, 8, 4);
    assert_eq!(bin.len(), HEADER_LEN);
    assert_eq!(&bin[..4], b"SDVS");
    let h = read_binary_header(&bin).unwrap();
    assert_eq!((h.width, h.height), (8, 4));
    assert!(serialize_events(&[], EventFormat::Csv, 8, 4).is_empty());

    let one = [ev(1000, 3, 5, true)];
    assert_eq!(serialize_events(&one, EventFormat::Csv, 8, 8), b"1000,3,5,1\n");
    let bin = serialize_events(&one, EventFormat::Binary, 8, 8);
    assert_eq!(bin.len(), HEADER_LEN + RECORD_LEN);
    assert_eq!(&bin[HEADER_LEN..HEADER_LEN + 8], &1000u64.to_le_bytes());
}

#[test]
fn malformed_input_is_rejected() {
    let bin = serialize_events(&[ev(1, 0, 0, false)], EventFormat::Binary, 2, 2);
    assert!(matches!(
        deserialize_events(&bin[..bin.len() - 1], EventFormat::Binary),
        Err(Error::Format(_))
    ));
    let mut bad = bin.clone();
    bad[0] = b'X';
    assert!(deserialize_events(&bad, EventFormat::Binary).is_err());
    assert!(deserialize_events(b"1,2,3\n", EventFormat::Csv).is_err());
    assert!(deserialize_events(b"1,2,3,7\n", EventFormat::Csv).is_err());
}

#[test]
fn large_random_streams_round_trip() {
    let events = common::random_events(100_000, 346, 260, 42);
    assert_eq!(events.len(), 100_000);
    for format in [EventFormat::Binary, EventFormat::Csv] {
        let bytes = serialize_events(&events, format, 346, 260);
        assert_eq!(deserialize_events(&bytes, format).unwrap(), events);
    }
}

#[test]
fn accumulation_windows_add_up() {
    let events = common::random_events(5_000, 16, 16, 3);
    let end = events.last().unwrap().t_us + 1;
    let whole = accumulate(&events, 16, 16, 0, end).unwrap();
    let a = accumulate(&events, 16, 16, 0, end / 2).unwrap();
    let b = accumulate(&events, 16, 16, end / 2, end - end / 2).unwrap();
    assert_eq!(whole.total(), 5_000);
    for i in 0..256 {
        assert_eq!(whole.on[i], a.on[i] + b.on[i]);
        assert_eq!(whole.off[i], a.off[i] + b.off[i]);
    }
    let signed = whole.signed();
    assert!((0..256).all(|i| signed[i] == whole.on[i] as i64 - whole.off[i] as i64));
    assert!(accumulate(&events, 8, 8, 0, end).is_err());
}

proptest! {
    #[test]
    fn any_sorted_stream_round_trips(raw in prop::collection::vec((0u64..1_000_000, 0u16..640, 0u16..480, any::<bool>()), 0..300)) {
        let mut events: Vec<Event> = raw.into_iter().map(|(t, x, y, on)| ev(t, x, y, on)).collect();
        events.sort_by_key(|e| e.order_key());
        events.dedup_by_key(|e| e.order_key());
        for format in [EventFormat::Binary, EventFormat::Csv] {
            let bytes = serialize_events(&events, format, 640, 480);
            prop_assert_eq!(deserialize_events(&bytes, format).unwrap(), events.clone());
        }
    }
}
