import { mkdtemp, rm, readFile, writeFile } from 'node:fs/promises';
import { tmpdir } from 'node:os';
import path from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';
import { packHeader, readMatrix, writeMatrix, EMBM_HEADER_SIZE } from '../src/embm.js';
import { readWithPipelineReader } from './util.js';

let dir: string;
beforeAll(async () => {
  dir = await mkdtemp(path.join(tmpdir(), 'embm-'));
});
afterAll(async () => {
  await rm(dir, { recursive: true, force: true });
});

describe('packHeader', () => {
  it('lays fields out byte-exactly', () => {
    const header = packHeader(3, 4);
    expect(header.length).toBe(EMBM_HEADER_SIZE);
    expect(header.toString('ascii', 0, 4)).toBe('EMBM');
    expect(header.readUInt32LE(4)).toBe(1);
    expect(header.readBigUInt64LE(8)).toBe(3n);
    expect(header.readUInt32LE(16)).toBe(4);
    expect(header.readUInt8(20)).toBe(0);
    expect([...header.subarray(21)]).toEqual(new Array(11).fill(0));
  });
});

describe('writeMatrix / readMatrix', () => {
  it('round-trips rows and ids bit-exactly', async () => {
    const rows = [
      Float32Array.from([1.5, -2.25, 0.125]),
      Float32Array.from([0, 3.5, -1]),
    ];
    const out = path.join(dir, 'roundtrip.embm');
    await writeMatrix(out, rows, ['a', 'b'], 3);

    const back = await readMatrix(out);
    expect(back.n).toBe(2);
    expect(back.d).toBe(3);
    expect(back.ids).toEqual(['a', 'b']);
    expect(Array.from(back.rows[0]!)).toEqual([1.5, -2.25, 0.125]);
    expect(Array.from(back.rows[1]!)).toEqual([0, 3.5, -1]);

    const sidecar = await readFile(`${out}.ids`, 'utf8');
    expect(sidecar).toBe('0\ta\n1\tb\n');
  });

  it('writes an empty matrix as a bare header', async () => {
    const out = path.join(dir, 'empty.embm');
    await writeMatrix(out, [], [], 7);
    const raw = await readFile(out);
    expect(raw.length).toBe(EMBM_HEADER_SIZE);
    const back = await readMatrix(out);
    expect(back.n).toBe(0);
    expect(back.d).toBe(7);
  });

  it('rejects row/id mismatches and wrong widths', async () => {
    const out = path.join(dir, 'bad.embm');
    await expect(writeMatrix(out, [Float32Array.from([1])], [], 1)).rejects.toThrow(/mismatch/);
    await expect(writeMatrix(out, [Float32Array.from([1, 2])], ['a'], 3)).rejects.toThrow(
      /width/,
    );
  });

  it('rejects truncated files and foreign magic', async () => {
    const out = path.join(dir, 'mangle.embm');
    await writeMatrix(out, [Float32Array.from([1, 2])], ['a'], 2);
    const raw = await readFile(out);

    await writeFile(path.join(dir, 'cut.embm'), raw.subarray(0, raw.length - 2));
    await writeFile(`${path.join(dir, 'cut.embm')}.ids`, '0\ta\n');
    await expect(readMatrix(path.join(dir, 'cut.embm'))).rejects.toThrow(/size/);

    const bad = Buffer.from(raw);
    bad.write('NOPE', 0, 'ascii');
    await writeFile(path.join(dir, 'notembm.embm'), bad);
    await expect(readMatrix(path.join(dir, 'notembm.embm'))).rejects.toThrow(/not an EMBM/);
  });

  it('is readable by the batch pipeline reader', async () => {
    const rows = [
      Float32Array.from([0.5, 1.5, 2.5, -3]),
      Float32Array.from([4, 5, 6, 7]),
      Float32Array.from([-1, -2, -3, -4]),
    ];
    const out = path.join(dir, 'cross.embm');
    await writeMatrix(out, rows, ['x-1', 'x-2', 'x-3'], 4);

    const seen = await readWithPipelineReader(out);
    expect(seen.n).toBe(3);
    expect(seen.d).toBe(4);
    expect(seen.ids).toEqual(['x-1', 'x-2', 'x-3']);
    const total = rows.flatMap((r) => Array.from(r)).reduce((a, b) => a + b, 0);
    expect(Math.abs(seen.total - total)).toBeLessThan(1e-9);
  });
});
