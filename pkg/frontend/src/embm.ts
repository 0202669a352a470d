import { promises as fs } from 'node:fs';

export const EMBM_MAGIC = 'EMBM';
export const EMBM_VERSION = 1;
export const EMBM_HEADER_SIZE = 32;

/** 32-byte header: magic, version u32 LE, n u64 LE, d u32 LE, dtype u8 (0 = f32 LE), zero pad. */
export function packHeader(n: number, d: number): Buffer {
  const header = Buffer.alloc(EMBM_HEADER_SIZE);
  header.write(EMBM_MAGIC, 0, 'ascii');
  header.writeUInt32LE(EMBM_VERSION, 4);
  header.writeBigUInt64LE(BigInt(n), 8);
  header.writeUInt32LE(d, 16);
  header.writeUInt8(0, 20);
  return header;
}

/**
 * Write an n x d float32 matrix plus its row<TAB>id sidecar. Rows are
 * little-endian row-major right after the header, the exact layout the
 * batch pipeline's matrix reader memory-maps.
 */
export async function writeMatrix(
  path: string,
  rows: Float32Array[],
  ids: string[],
  d: number,
): Promise<void> {
  if (rows.length !== ids.length) {
    throw new Error(`row/id count mismatch: ${rows.length} rows vs ${ids.length} ids`);
  }
  const chunks = [packHeader(rows.length, d)];
  for (const row of rows) {
    if (row.length !== d) throw new Error(`row width ${row.length}, want ${d}`);
    // Float32Array is host-endian; every platform this runs on is LE
    chunks.push(Buffer.from(row.buffer, row.byteOffset, row.byteLength));
  }
  await fs.writeFile(path, Buffer.concat(chunks));
  await fs.writeFile(`${path}.ids`, ids.map((id, i) => `${i}\t${id}\n`).join(''), 'utf8');
}

export interface MatrixFile {
  n: number;
  d: number;
  rows: Float32Array[];
  ids: string[];
}

/** Strict reader counterpart, mostly for round-trip tests. */
export async function readMatrix(path: string): Promise<MatrixFile> {
  const raw = await fs.readFile(path);
  if (raw.length < EMBM_HEADER_SIZE || raw.toString('ascii', 0, 4) !== EMBM_MAGIC) {
    throw new Error(`${path}: not an EMBM file`);
  }
  if (raw.readUInt32LE(4) !== EMBM_VERSION) throw new Error(`${path}: unsupported version`);
  const n = Number(raw.readBigUInt64LE(8));
  const d = raw.readUInt32LE(16);
  if (raw.readUInt8(20) !== 0) throw new Error(`${path}: unsupported dtype`);
  if (raw.length !== EMBM_HEADER_SIZE + n * d * 4) {
    throw new Error(`${path}: size ${raw.length} does not match n=${n} d=${d}`);
  }
  const rows: Float32Array[] = [];
  for (let i = 0; i < n; i++) {
    const offset = EMBM_HEADER_SIZE + i * d * 4;
    const slice = raw.subarray(offset, offset + d * 4);
    rows.push(new Float32Array(slice.buffer.slice(slice.byteOffset, slice.byteOffset + d * 4)));
  }
  const idsText = await fs.readFile(`${path}.ids`, 'utf8');
  const ids = idsText
    .split('\n')
    .filter((line) => line.length > 0)
    .map((line, i) => {
      const tab = line.indexOf('\t');
      if (tab < 0 || Number(line.slice(0, tab)) !== i) {
        throw new Error(`${path}.ids:${i + 1}: malformed sidecar line`);
      }
      return line.slice(tab + 1);
    });
  if (ids.length !== n) throw new Error(`${path}.ids: ${ids.length} entries for n=${n}`);
  return { n, d, rows, ids };
}
