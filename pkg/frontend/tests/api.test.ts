import { describe, expect, it, vi } from "vitest";
import { ApiError, PickerApi } from "../src/api.js";
import { buildPly } from "./ply.test.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("PickerApi", () => {
  it("lists fragments from the expected route", async () => {
    const fetchMock = vi.fn(async (url: any) => {
      expect(String(url)).toBe("http://svc/api/fragments");
      return jsonResponse([{ id: "frag0", vertices: 10, faces: 4 }]);
    });
    const api = new PickerApi("http://svc", fetchMock as unknown as typeof fetch);
    const frags = await api.listFragments();
    expect(frags[0].id).toBe("frag0");
  });

  it("posts correspondences in the wire format", async () => {
    const fetchMock = vi.fn(async (url: any, init?: RequestInit) => {
      expect(String(url)).toBe("/api/correspondences");
      expect(init?.method).toBe("POST");
      const body = JSON.parse(String(init?.body));
      expect(body).toEqual({
        source_id: "frag1",
        target_id: "frag0",
        pairs: [{ src: [1, 2, 3], dst: [4, 5, 6] }],
      });
      return jsonResponse({ stored: "x", pairs: 1 });
    });
    const api = new PickerApi("", fetchMock as unknown as typeof fetch);
    await api.postCorrespondences({
      source_id: "frag1",
      target_id: "frag0",
      pairs: [{ src: [1, 2, 3], dst: [4, 5, 6] }],
    });
    expect(fetchMock).toHaveBeenCalledTimes(1);
  });

  it("echoes the service registration payload exactly", async () => {
    const payload = {
      source_id: "frag1",
      target_id: "frag0",
      transform: [...Array(16).keys()].map((v) => v / 7),
      coarse_rmse: 0.25,
      rmse: 0.0012345678901234,
      iterations: 17,
      converged: true,
      trace: [0.5, 0.1, 0.0012345678901234],
      coarse_only: false,
      low_condition: false,
    };
    const fetchMock = vi.fn(async () => jsonResponse(payload));
    const api = new PickerApi("", fetchMock as unknown as typeof fetch);
    const got = await api.register("frag1", "frag0");
    // Displayed numbers must be byte-equal to what the service sent.
    expect(got).toEqual(payload);
    expect(got.rmse).toBe(payload.rmse);
    expect(got.transform).toEqual(payload.transform);
  });

  it("surfaces service error messages verbatim", async () => {
    const message =
      "got 2 pairs; the operator selects at least three matching points on " +
      "each partial object mesh";
    const fetchMock = vi.fn(async () => jsonResponse({ error: message }, 400));
    const api = new PickerApi("", fetchMock as unknown as typeof fetch);
    try {
      await api.postCorrespondences({ source_id: "a", target_id: "b", pairs: [] });
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).status).toBe(400);
      expect((err as ApiError).message).toBe(message);
    }
  });

  it("surfaces 409 while a job is running", async () => {
    const fetchMock = vi.fn(async () =>
      jsonResponse({ error: "a registration job is already running" }, 409),
    );
    const api = new PickerApi("", fetchMock as unknown as typeof fetch);
    await expect(api.merge()).rejects.toMatchObject({
      status: 409,
      message: "a registration job is already running",
    });
  });

  it("parses binary mesh responses", async () => {
    const buf = buildPly(
      [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
      [[0, 0, 1], [0, 0, 1], [0, 0, 1]],
      [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
      [[0, 1, 2]],
    );
    const fetchMock = vi.fn(async (url: any) => {
      expect(String(url)).toBe("/api/fragments/frag0/mesh");
      return new Response(buf, {
        status: 200,
        headers: { "Content-Type": "application/octet-stream" },
      });
    });
    const api = new PickerApi("", fetchMock as unknown as typeof fetch);
    const mesh = await api.fetchMesh("frag0");
    expect(mesh.vertexCount).toBe(3);
    expect(mesh.faceCount).toBe(1);
  });
});
