import { HashEncoder } from './encoder.js';
import { batchExport } from './exporter.js';

// Batch exporter entry:
//   node dist/cli.js <corpus.jsonl> <images-root> <out.embm> [--dim N] [--seed N]
async function main(): Promise<number> {
  const positional = process.argv.slice(2).filter((a) => !a.startsWith('--'));
  if (positional.length !== 3) {
    console.error('usage: cli.js <corpus.jsonl> <images-root> <out.embm> [--dim N] [--seed N]');
    return 2;
  }
  const numberFlag = (name: string, fallback: number) => {
    const i = process.argv.indexOf(`--${name}`);
    return i >= 0 && i + 1 < process.argv.length ? Number(process.argv[i + 1]) : fallback;
  };
  const [corpusPath, imagesRoot, outPath] = positional as [string, string, string];
  const encoder = new HashEncoder(numberFlag('dim', 768), numberFlag('seed', 0));
  try {
    const result = await batchExport(corpusPath, imagesRoot, outPath, encoder);
    console.log(
      `wrote ${result.written} rows to ${result.outPath} ` +
        `(${result.skipped.length} skipped, ${result.truncatedPosts} truncated to first image)`,
    );
    return 0;
  } catch (err) {
    console.error(String(err));
    return 1;
  }
}

process.exitCode = await main();
