/** Shared test utilities: golden fixture loading and a recording fake
 * fetch. Fixtures under tests/fixtures/ are verbatim response bodies
 * captured from the running service, so every parse in these tests
 * exercises the real wire format.
 */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { FetchLike } from "../src/api.js";

const FIXTURE_DIR = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export function fixture<T>(name: string): T {
  return JSON.parse(readFileSync(join(FIXTURE_DIR, `${name}.json`), "utf8")) as T;
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export interface RecordedCall {
  url: string;
  init: RequestInit;
}

export interface FakeFetch {
  fn: FetchLike;
  calls: RecordedCall[];
}

/** Wrap a route handler in a fetch that records every call and honors
 * an already-aborted signal the way a real fetch would. */
export function recordingFetch(
  handler: (url: string, init: RequestInit) => Response | Promise<Response>,
): FakeFetch {
  const calls: RecordedCall[] = [];
  const fn: FetchLike = async (url, init = {}) => {
    calls.push({ url, init });
    if (init.signal?.aborted) {
      throw new DOMException("the operation was aborted", "AbortError");
    }
    return handler(url, init);
  };
  return { fn, calls };
}

export interface Deferred<T> {
  promise: Promise<T>;
  resolve: (value: T) => void;
  reject: (reason: unknown) => void;
}

export function deferred<T>(): Deferred<T> {
  let resolve!: (value: T) => void;
  let reject!: (reason: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

export function requestBody(call: RecordedCall): unknown {
  return typeof call.init.body === "string" ? JSON.parse(call.init.body) : null;
}
