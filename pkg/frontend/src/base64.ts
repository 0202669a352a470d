const BASE64_RE = /^[A-Za-z0-9+/]*={0,2}$/;

/**
 * Decode standard base64 or return null. Node's Buffer.from is lenient
 * (it silently drops junk), so reject malformed payloads up front — the
 * service must answer 400 bad_image for these, not embed garbage.
 */
export function decodeBase64Strict(payload: string): Buffer | null {
  if (payload.length === 0 || payload.length % 4 !== 0 || !BASE64_RE.test(payload)) {
    return null;
  }
  return Buffer.from(payload, 'base64');
}
