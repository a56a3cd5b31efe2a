// Route-table fetch stub for flow tests.

import type { FetchLike } from "../src/api.js";

export type Responder = (body: unknown) => { status?: number; body: unknown };

export class FakeBackend {
  readonly calls: { method: string; path: string; body: unknown }[] = [];
  private readonly routes = new Map<string, Responder>();

  on(method: string, path: string, responder: Responder | unknown): void {
    const fn = typeof responder === "function"
      ? (responder as Responder)
      : () => ({ body: responder });
    this.routes.set(`${method} ${path}`, fn);
  }

  fetch: FetchLike = async (input, init) => {
    const method = init?.method ?? "GET";
    const url = new URL(input, "http://fake");
    const key = `${method} ${url.pathname}`;
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    this.calls.push({ method, path: url.pathname, body });
    const responder = this.routes.get(key);
    if (!responder) {
      return new Response(JSON.stringify({ code: "NOT_FOUND", detail: key }), {
        status: 404,
        headers: { "Content-Type": "application/json" },
      });
    }
    const { status = 200, body: reply } = responder(body);
    return new Response(JSON.stringify(reply), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
}
