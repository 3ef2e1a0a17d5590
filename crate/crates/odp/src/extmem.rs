//! Simulated external (untrusted) memory and access-pattern recording.
//!
//! Algorithms in this crate store their data in [`ExternalArray`]s backed by a
//! shared [`TraceRecorder`]. Every `read`/`write` appends an [`AccessEvent`]
//! carrying only the operation kind, array id and cell index — never the
//! payload. The recorded [`AccessTrace`] is exactly what an adversary watching
//! the memory bus of a TEE would observe: addresses and operation kinds of
//! encrypted cells.
//!
//! Computation on values held in Rust locals models the TEE's private memory
//! and produces no events. [`PrivateMemoryMeter`] tracks how many words of
//! private memory an algorithm claims, so tests can assert sublinear usage.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::rc::Rc;

use thiserror::Error;

/// Opaque identifier of one simulated external array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArrayId(pub u32);

/// Operation kind visible to the adversary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

impl AccessKind {
    fn symbol(self) -> char {
        match self {
            AccessKind::Read => 'r',
            AccessKind::Write => 'w',
        }
    }
}

/// One external-memory access: `(seq, kind, array, index)`. No payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEvent {
    pub seq: u64,
    pub kind: AccessKind,
    pub array_id: ArrayId,
    pub index: u64,
}

/// Ordered log of every external access performed under one recorder.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AccessTrace {
    pub events: Vec<AccessEvent>,
}

/// Error produced when parsing the line-oriented trace format.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("line {line}: expected `seq,kind,array_id,index`")]
    Malformed { line: usize },
    #[error("line {line}: unknown access kind `{kind}`")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: invalid number")]
    BadNumber { line: usize },
    #[error("line {line}: sequence number {got} is not strictly increasing")]
    NonMonotoneSeq { line: usize, got: u64 },
}

impl AccessTrace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Serializes as one `seq,kind,array_id,index` line per event.
    /// Byte-for-byte deterministic given identical event sequences.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 12);
        for e in &self.events {
            writeln!(out, "{},{},{},{}", e.seq, e.kind.symbol(), e.array_id.0, e.index).unwrap();
        }
        out
    }

    /// Parses the line format produced by [`AccessTrace::to_text`].
    pub fn parse(text: &str) -> Result<AccessTrace, TraceParseError> {
        let mut events = Vec::new();
        let mut last_seq: Option<u64> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.is_empty() {
                continue;
            }
            let mut parts = raw.split(',');
            let (seq, kind, array, index) = match (
                parts.next(),
                parts.next(),
                parts.next(),
                parts.next(),
                parts.next(),
            ) {
                (Some(a), Some(b), Some(c), Some(d), None) => (a, b, c, d),
                _ => return Err(TraceParseError::Malformed { line }),
            };
            let seq: u64 = seq.parse().map_err(|_| TraceParseError::BadNumber { line })?;
            let kind = match kind {
                "r" => AccessKind::Read,
                "w" => AccessKind::Write,
                other => {
                    return Err(TraceParseError::UnknownKind { line, kind: other.to_string() });
                }
            };
            let array_id: u32 = array.parse().map_err(|_| TraceParseError::BadNumber { line })?;
            let index: u64 = index.parse().map_err(|_| TraceParseError::BadNumber { line })?;
            if let Some(prev) = last_seq {
                if seq <= prev {
                    return Err(TraceParseError::NonMonotoneSeq { line, got: seq });
                }
            }
            last_seq = Some(seq);
            events.push(AccessEvent { seq, kind, array_id: ArrayId(array_id), index });
        }
        Ok(AccessTrace { events })
    }
}

#[derive(Debug, Default)]
struct RecorderState {
    next_seq: u64,
    next_array: u32,
    events: Vec<AccessEvent>,
    event_count: u64,
    store_events: bool,
}

/// Records the access pattern of one run. Single-threaded; the verification
/// harness creates one recorder per trial.
#[derive(Debug, Clone)]
pub struct TraceRecorder {
    state: Rc<RefCell<RecorderState>>,
}

impl Default for TraceRecorder {
    fn default() -> Self {
        Self::new()
    }
}

impl TraceRecorder {
    pub fn new() -> Self {
        TraceRecorder {
            state: Rc::new(RefCell::new(RecorderState { store_events: true, ..Default::default() })),
        }
    }

    /// Recorder that only counts events. Used by utility suites that need
    /// trace lengths but not the events themselves.
    pub fn counting_only() -> Self {
        TraceRecorder { state: Rc::new(RefCell::new(RecorderState::default())) }
    }

    /// Allocates a new external array initialized with `cells`.
    /// Allocation itself is not an access and produces no events.
    pub fn array<T: Clone>(&self, cells: Vec<T>) -> ExternalArray<T> {
        let id = {
            let mut st = self.state.borrow_mut();
            let id = ArrayId(st.next_array);
            st.next_array += 1;
            id
        };
        ExternalArray { id, cells, recorder: self.clone() }
    }

    fn log(&self, kind: AccessKind, array_id: ArrayId, index: u64) {
        let mut st = self.state.borrow_mut();
        let seq = st.next_seq;
        st.next_seq += 1;
        st.event_count += 1;
        if st.store_events {
            st.events.push(AccessEvent { seq, kind, array_id, index });
        }
    }

    /// Total number of accesses logged so far.
    pub fn event_count(&self) -> u64 {
        self.state.borrow().event_count
    }

    /// Returns the complete ordered trace and resets the recorder for the
    /// next run. Array ids keep incrementing so arrays stay distinguishable
    /// across captures within a session.
    pub fn take_trace(&self) -> AccessTrace {
        let mut st = self.state.borrow_mut();
        st.next_seq = 0;
        st.event_count = 0;
        AccessTrace { events: std::mem::take(&mut st.events) }
    }

    /// Runs `run` against a fresh recorder and returns its result together
    /// with the complete trace of every access it performed.
    pub fn capture<R>(run: impl FnOnce(&TraceRecorder) -> R) -> (R, AccessTrace) {
        let rec = TraceRecorder::new();
        let out = run(&rec);
        let trace = rec.take_trace();
        (out, trace)
    }
}

/// Simulated untrusted array of opaque fixed-width cells.
///
/// The trace sees `(kind, array_id, index)` per access; cell contents stay in
/// the payload and never reach the trace.
#[derive(Debug)]
pub struct ExternalArray<T> {
    id: ArrayId,
    cells: Vec<T>,
    recorder: TraceRecorder,
}

impl<T: Clone> ExternalArray<T> {
    pub fn id(&self) -> ArrayId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Reads cell `i` into private memory. Out-of-bounds indices are bugs in
    /// the calling algorithm, never data-dependent control flow.
    pub fn read(&self, i: usize) -> T {
        assert!(i < self.cells.len(), "external read out of bounds: {} >= {}", i, self.cells.len());
        self.recorder.log(AccessKind::Read, self.id, i as u64);
        self.cells[i].clone()
    }

    /// Writes `value` to cell `i`. Writing back the value just read is a
    /// "fake write": the trace shows it identically to a real write.
    pub fn write(&mut self, i: usize, value: T) {
        assert!(i < self.cells.len(), "external write out of bounds: {} >= {}", i, self.cells.len());
        self.recorder.log(AccessKind::Write, self.id, i as u64);
        self.cells[i] = value;
    }
}

/// Advisory meter for the TEE's private memory, in words.
///
/// Metered rather than enforced: algorithms declare what they hold in private
/// memory and tests assert the high-water mark stays within the configured
/// capacity.
#[derive(Debug, Clone)]
pub struct PrivateMemoryMeter {
    capacity_words: u64,
    current_words: u64,
    peak_words: u64,
}

impl PrivateMemoryMeter {
    pub fn new(capacity_words: u64) -> Self {
        PrivateMemoryMeter { capacity_words, current_words: 0, peak_words: 0 }
    }

    pub fn alloc(&mut self, words: u64) {
        self.current_words += words;
        self.peak_words = self.peak_words.max(self.current_words);
    }

    pub fn free(&mut self, words: u64) {
        self.current_words = self.current_words.saturating_sub(words);
    }

    pub fn capacity_words(&self) -> u64 {
        self.capacity_words
    }

    pub fn peak_words(&self) -> u64 {
        self.peak_words
    }

    /// True iff the high-water mark never exceeded the capacity.
    pub fn compliant(&self) -> bool {
        self.peak_words <= self.capacity_words
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_returns_payload_and_logs_event() {
        let rec = TraceRecorder::new();
        let arr = rec.array(vec![10u64, 11, 12, 13]);
        assert_eq!(arr.read(0), 10);
        let trace = rec.take_trace();
        assert_eq!(trace.len(), 1);
        let e = trace.events[0];
        assert_eq!((e.kind, e.array_id, e.index), (AccessKind::Read, arr.id(), 0));
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn read_out_of_bounds_is_a_bounds_error() {
        let rec = TraceRecorder::new();
        let arr = rec.array(vec![0u64; 4]);
        arr.read(4);
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn write_out_of_bounds_is_a_bounds_error() {
        let rec = TraceRecorder::new();
        let mut arr = rec.array(vec![0u64; 4]);
        arr.write(4, 1);
    }

    #[test]
    fn sequential_scan_trace() {
        let rec = TraceRecorder::new();
        let arr = rec.array(vec![0u64; 3]);
        for i in 0..3 {
            arr.read(i);
        }
        let trace = rec.take_trace();
        let got: Vec<_> = trace.events.iter().map(|e| (e.kind, e.index)).collect();
        assert_eq!(
            got,
            vec![(AccessKind::Read, 0), (AccessKind::Read, 1), (AccessKind::Read, 2)]
        );
    }

    #[test]
    fn write_stores_payload_and_both_events_recorded() {
        let rec = TraceRecorder::new();
        let mut arr = rec.array(vec![0u64; 4]);
        arr.write(2, 7);
        arr.write(2, 8);
        assert_eq!(arr.read(2), 8);
        let trace = rec.take_trace();
        let kinds: Vec<_> = trace.events.iter().map(|e| (e.kind, e.index)).collect();
        assert_eq!(
            kinds,
            vec![(AccessKind::Write, 2), (AccessKind::Write, 2), (AccessKind::Read, 2)]
        );
    }

    #[test]
    fn fake_write_indistinguishable_from_real_write() {
        // read(b, j) then write(b, j, same value): counter unchanged,
        // trace shows (r, b, j), (w, b, j) exactly as a real increment would.
        let rec = TraceRecorder::new();
        let mut b = rec.array(vec![5u64; 4]);
        let v = b.read(1);
        b.write(1, v);
        assert_eq!(b.read(1), 5);
        let fake = rec.take_trace();

        let rec2 = TraceRecorder::new();
        let mut b2 = rec2.array(vec![5u64; 4]);
        let v2 = b2.read(1);
        b2.write(1, v2 + 1);
        b2.read(1);
        let real = rec2.take_trace();
        assert_eq!(fake.to_text(), real.to_text());
    }

    #[test]
    fn capture_empty_computation_yields_empty_trace() {
        let (_, trace) = TraceRecorder::capture(|_| ());
        assert!(trace.is_empty());
    }

    #[test]
    fn capture_scan_has_length_n_and_is_deterministic() {
        let scan = |rec: &TraceRecorder| {
            let arr = rec.array(vec![1u64; 17]);
            for i in 0..arr.len() {
                arr.read(i);
            }
        };
        let (_, t1) = TraceRecorder::capture(scan);
        let (_, t2) = TraceRecorder::capture(scan);
        assert_eq!(t1.len(), 17);
        assert_eq!(t1, t2);
    }

    #[test]
    fn seq_strictly_increasing() {
        let rec = TraceRecorder::new();
        let mut arr = rec.array(vec![0u64; 8]);
        for i in 0..8 {
            arr.write(i, i as u64);
            arr.read(i);
        }
        let trace = rec.take_trace();
        for w in trace.events.windows(2) {
            assert!(w[1].seq > w[0].seq);
        }
    }

    #[test]
    fn payload_opacity_serialized_trace_has_no_payload_bytes() {
        let sentinel = 0xDEAD_BEEF_u64;
        let rec = TraceRecorder::new();
        let mut arr = rec.array(vec![sentinel; 4]);
        arr.write(3, sentinel);
        arr.read(3);
        let text = rec.take_trace().to_text();
        assert!(!text.contains(&sentinel.to_string()));
        assert!(!text.contains("deadbeef"));
    }

    #[test]
    fn trace_text_round_trips() {
        let rec = TraceRecorder::new();
        let mut a = rec.array(vec![0u64; 4]);
        let b = rec.array(vec![0u64; 2]);
        a.write(1, 9);
        b.read(0);
        a.read(1);
        let trace = rec.take_trace();
        let parsed = AccessTrace::parse(&trace.to_text()).unwrap();
        assert_eq!(parsed, trace);
    }

    #[test]
    fn trace_parse_rejects_garbage() {
        assert!(matches!(
            AccessTrace::parse("0,r,0"),
            Err(TraceParseError::Malformed { line: 1 })
        ));
        assert!(matches!(
            AccessTrace::parse("0,x,0,0"),
            Err(TraceParseError::UnknownKind { line: 1, .. })
        ));
        assert!(matches!(
            AccessTrace::parse("0,r,0,0\n0,r,0,1"),
            Err(TraceParseError::NonMonotoneSeq { line: 2, .. })
        ));
    }

    #[test]
    fn meter_tracks_peak() {
        let mut meter = PrivateMemoryMeter::new(10);
        meter.alloc(4);
        meter.alloc(5);
        meter.free(6);
        meter.alloc(2);
        assert_eq!(meter.peak_words(), 9);
        assert!(meter.compliant());
        meter.alloc(20);
        assert!(!meter.compliant());
    }
}
