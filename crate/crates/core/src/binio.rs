use crate::error::{Error, Result};

/// Bounds-checked little-endian reader over a byte slice.
pub(crate) struct Cursor<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    pub(crate) fn new(buf: &'b [u8], pos: usize) -> Self {
        Self { buf, pos }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(format!(
                "need {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Checks the 4-byte magic and u32 version; returns a cursor positioned after them.
pub(crate) fn open<'b>(bytes: &'b [u8], magic: [u8; 4], version: u32) -> Result<Cursor<'b>> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("missing magic".into()));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    let mut cur = Cursor::new(bytes, 4);
    let v = cur.u32("version")?;
    if v != version {
        return Err(Error::Version {
            expected: version,
            found: v,
        });
    }
    Ok(cur)
}

/// Reads the trailing CRC32 and checks it against everything before it.
pub(crate) fn finish(mut cur: Cursor<'_>) -> Result<()> {
    let body_end = cur.pos();
    let stored = cur.u32("crc")?;
    if cur.remaining() != 0 {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after CRC",
            cur.remaining()
        )));
    }
    let computed = crc32fast::hash(&cur.buf[..body_end]);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }
    Ok(())
}
