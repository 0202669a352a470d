import type { AddressInfo } from 'node:net';
import { execFile } from 'node:child_process';
import { promisify } from 'node:util';
import { HashEncoder } from '../src/encoder.js';
import { createApp, ServiceOptions } from '../src/service.js';

const execFileAsync = promisify(execFile);

export interface RunningService {
  url: string;
  close: () => Promise<void>;
}

export async function startService(
  encoder: HashEncoder | null,
  options?: ServiceOptions,
): Promise<RunningService> {
  const server = createApp(encoder, options).listen(0, '127.0.0.1');
  await new Promise<void>((resolve) => server.once('listening', resolve));
  const { port } = server.address() as AddressInfo;
  return {
    url: `http://127.0.0.1:${port}`,
    close: () =>
      new Promise((resolve, reject) => server.close((err) => (err ? reject(err) : resolve()))),
  };
}

const READER_SCRIPT = `
import sys
import numpy as np
from vecfold.store import open_matrix

handle = open_matrix(sys.argv[1])
print(handle.n, handle.d)
print(repr(float(np.asarray(handle.rows, dtype="float64").sum())))
for post_id in handle.ids:
    print(post_id)
`;

/** Open an exported EMBM with the batch pipeline's own reader. */
export async function readWithPipelineReader(
  path: string,
): Promise<{ n: number; d: number; total: number; ids: string[] }> {
  const { stdout } = await execFileAsync('python3', ['-c', READER_SCRIPT, path]);
  const lines = stdout.trimEnd().split('\n');
  const [n, d] = lines[0]!.split(' ').map(Number) as [number, number];
  return { n, d, total: Number(lines[1]), ids: lines.slice(2) };
}
