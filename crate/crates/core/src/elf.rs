//! Minimal ELF64 reading and writing for RISC-V guest images.
//!
//! Only what the loader needs: the identification header, program headers,
//! and PT_LOAD segments. The writer produces single-segment executables for
//! the bundled guests.

use std::fmt;

pub const EM_RISCV: u16 = 243;
pub const PT_LOAD: u32 = 1;

#[derive(Debug)]
pub enum ElfError {
    TooShort,
    BadMagic,
    Not64Bit,
    NotLittleEndian,
    WrongMachine(u16),
    NotExecutable,
    Malformed(&'static str),
    OverlappingSegments,
}

impl fmt::Display for ElfError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElfError::TooShort => write!(f, "file too short for an ELF header"),
            ElfError::BadMagic => write!(f, "not an ELF file"),
            ElfError::Not64Bit => write!(f, "not a 64-bit ELF (ELFCLASS64 required)"),
            ElfError::NotLittleEndian => write!(f, "not little-endian"),
            ElfError::WrongMachine(m) => write!(f, "not a RISC-V executable (e_machine={m})"),
            ElfError::NotExecutable => write!(f, "not an executable (ET_EXEC required)"),
            ElfError::Malformed(what) => write!(f, "malformed ELF: {what}"),
            ElfError::OverlappingSegments => write!(f, "overlapping PT_LOAD segments"),
        }
    }
}

impl std::error::Error for ElfError {}

/// One loadable segment.
pub struct Segment {
    pub vaddr: u64,
    pub mem_size: u64,
    pub data: Vec<u8>,
    pub flags: u32,
}

pub struct Image {
    pub entry: u64,
    pub segments: Vec<Segment>,
}

fn u16le(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes(b[off..off + 2].try_into().unwrap())
}

fn u32le(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn u64le(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

/// Parse an ELF64 little-endian RISC-V executable.
pub fn parse(bytes: &[u8]) -> Result<Image, ElfError> {
    if bytes.len() < 64 {
        return Err(ElfError::TooShort);
    }
    if &bytes[0..4] != b"\x7fELF" {
        return Err(ElfError::BadMagic);
    }
    if bytes[4] != 2 {
        return Err(ElfError::Not64Bit);
    }
    if bytes[5] != 1 {
        return Err(ElfError::NotLittleEndian);
    }
    let e_type = u16le(bytes, 16);
    if e_type != 2 {
        return Err(ElfError::NotExecutable);
    }
    let machine = u16le(bytes, 18);
    if machine != EM_RISCV {
        return Err(ElfError::WrongMachine(machine));
    }
    let entry = u64le(bytes, 24);
    let phoff = u64le(bytes, 32) as usize;
    let phentsize = u16le(bytes, 54) as usize;
    let phnum = u16le(bytes, 56) as usize;
    if phentsize < 56 {
        return Err(ElfError::Malformed("program header entry size"));
    }

    let mut segments = Vec::new();
    for i in 0..phnum {
        let off = phoff + i * phentsize;
        if off + 56 > bytes.len() {
            return Err(ElfError::Malformed("program header out of bounds"));
        }
        let p_type = u32le(bytes, off);
        if p_type != PT_LOAD {
            continue;
        }
        let flags = u32le(bytes, off + 4);
        let p_offset = u64le(bytes, off + 8) as usize;
        let vaddr = u64le(bytes, off + 16);
        let filesz = u64le(bytes, off + 32) as usize;
        let memsz = u64le(bytes, off + 40);
        if (memsz as usize) < filesz {
            return Err(ElfError::Malformed("memsz < filesz"));
        }
        if p_offset.checked_add(filesz).is_none_or(|end| end > bytes.len()) {
            return Err(ElfError::Malformed("segment data out of bounds"));
        }
        segments.push(Segment {
            vaddr,
            mem_size: memsz,
            data: bytes[p_offset..p_offset + filesz].to_vec(),
            flags,
        });
    }

    // Reject overlapping LOAD segments.
    let mut ranges: Vec<(u64, u64)> = segments
        .iter()
        .filter(|s| s.mem_size > 0)
        .map(|s| (s.vaddr, s.vaddr + s.mem_size))
        .collect();
    ranges.sort_unstable();
    for pair in ranges.windows(2) {
        if pair[0].1 > pair[1].0 {
            return Err(ElfError::OverlappingSegments);
        }
    }

    Ok(Image { entry, segments })
}

/// Write a single-segment ELF64 RISC-V executable.
pub fn write(entry: u64, vaddr: u64, data: &[u8]) -> Vec<u8> {
    write_segments(entry, &[(vaddr, data.to_vec(), 0x7)])
}

/// Write a multi-segment ELF64 RISC-V executable from (vaddr, data, flags).
pub fn write_segments(entry: u64, segs: &[(u64, Vec<u8>, u32)]) -> Vec<u8> {
    let ehsize = 64u64;
    let phentsize = 56u64;
    let phnum = segs.len() as u64;
    let mut out = Vec::new();
    out.extend_from_slice(b"\x7fELF");
    out.push(2); // ELFCLASS64
    out.push(1); // little endian
    out.push(1); // version
    out.extend_from_slice(&[0; 9]);
    out.extend_from_slice(&2u16.to_le_bytes()); // ET_EXEC
    out.extend_from_slice(&EM_RISCV.to_le_bytes());
    out.extend_from_slice(&1u32.to_le_bytes()); // e_version
    out.extend_from_slice(&entry.to_le_bytes());
    out.extend_from_slice(&ehsize.to_le_bytes()); // e_phoff
    out.extend_from_slice(&0u64.to_le_bytes()); // e_shoff
    out.extend_from_slice(&0u32.to_le_bytes()); // e_flags
    out.extend_from_slice(&(ehsize as u16).to_le_bytes());
    out.extend_from_slice(&(phentsize as u16).to_le_bytes());
    out.extend_from_slice(&(phnum as u16).to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes()); // e_shentsize
    out.extend_from_slice(&0u16.to_le_bytes()); // e_shnum
    out.extend_from_slice(&0u16.to_le_bytes()); // e_shstrndx

    let mut data_off = ehsize + phentsize * phnum;
    let mut offsets = Vec::new();
    for (_, data, _) in segs {
        offsets.push(data_off);
        data_off += data.len() as u64;
    }
    for ((vaddr, data, flags), off) in segs.iter().zip(&offsets) {
        out.extend_from_slice(&PT_LOAD.to_le_bytes());
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&off.to_le_bytes());
        out.extend_from_slice(&vaddr.to_le_bytes());
        out.extend_from_slice(&vaddr.to_le_bytes()); // paddr
        out.extend_from_slice(&(data.len() as u64).to_le_bytes()); // filesz
        out.extend_from_slice(&(data.len() as u64).to_le_bytes()); // memsz
        out.extend_from_slice(&0x1000u64.to_le_bytes()); // align
    }
    for (_, data, _) in segs {
        out.extend_from_slice(data);
    }
    out
}
